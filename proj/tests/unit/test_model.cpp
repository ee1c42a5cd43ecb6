#include <functional>
#include <random>

#include "doctest.h"
#include "flim/error.hpp"
#include "flim/log.hpp"
#include "flim/model.hpp"
#include "oracles.hpp"
#include "synthetic.hpp"

using namespace flim;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Internal;
}

double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

struct Fixture {
  std::vector<ImageTensor> images;
  std::vector<MarkerSet> markers;
};

Fixture marked_textures(std::size_t per_class, std::size_t size) {
  Fixture f;
  for (Label l = 1; l <= 3; ++l)
    for (std::size_t i = 0; i < per_class; ++i) {
      const std::string id = "t" + std::to_string(l) + "_" + std::to_string(i);
      f.images.push_back(synthetic::texture(l, size, size, 100 * l + i));
      f.markers.push_back(synthetic::scripted_markers(id, l, size, size));
    }
  return f;
}

FlimModel small_model() {
  const auto f = marked_textures(1, 24);
  FlimModel model;
  model.class_count = 3;
  model.input_channels = 3;
  model.class_names = synthetic::texture_classes();
  ConvLayerConfig cfg;
  cfg.filters_per_marker = 2;
  cfg.pool = {3, 3};
  cfg.pool_stride = 2;
  model.layers.push_back(learn_conv_layer(f.images, f.markers, cfg, 3));

  std::vector<FeatureVector> feats;
  std::vector<Label> labels;
  for (std::size_t i = 0; i < f.images.size(); ++i) {
    for (int j = 0; j < 2; ++j) {
      auto img = f.images[i];
      if (j == 1) img.at(0, 0, 0) += 1.0f;
      feats.push_back(forward_extract(model, img));
      labels.push_back(f.markers[i].strokes[0].label);
    }
  }
  model.fc = learn_fc_layer(feats, labels, NeuronsPerClass{std::size_t{2}}, 4);
  std::vector<FeatureVector> fc_out;
  for (const auto& x : feats) fc_out.push_back(apply_fc_layer(*model.fc, x));
  DecisionHead head;
  head.name = "FC";
  head.uses_fc = true;
  head.depth = 1;
  head.zscore = fit_zscore(fc_out);
  for (auto& x : fc_out) apply_zscore_inplace(x, *head.zscore);
  head.svm = train_ovo(fc_out, labels, 3, {1.0, 0.5, 1e-3, 10});
  model.heads.push_back(head);
  model.provenance = R"({"note":"unit"})";
  return model;
}

}  // namespace

TEST_CASE("per-marker filters: count bound, unit norm, provenance") {
  const auto f = marked_textures(2, 40);
  ConvLayerConfig cfg;
  cfg.k = 5;
  cfg.filters_per_marker = 4;
  const auto layer = learn_conv_layer(f.images, f.markers, cfg, 1);
  std::size_t strokes = 0;
  for (const auto& ms : f.markers) strokes += ms.strokes.size();
  CHECK(layer.bank.size() <= cfg.filters_per_marker * strokes);
  CHECK(layer.bank.size() >= strokes);
  CHECK(layer.bank.k() == 5);
  CHECK(layer.bank.channels() == 3);
  for (const auto& filter : layer.bank.filters()) {
    CHECK(norm(filter.weights) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(filter.source.label >= 1);
    CHECK(filter.source.label <= 3);
    CHECK(filter.source.stroke < 2);
    CHECK(filter.source.image_id.rfind("t", 0) == 0);
  }
  CHECK(learn_conv_layer(f.images, f.markers, cfg, 1) == layer);
}

TEST_CASE("class-scoped filters pool strokes by label") {
  const auto f = marked_textures(2, 40);
  ConvLayerConfig cfg;
  cfg.filters_per_marker = 3;
  cfg.scope = ClusterScope::Class;
  const auto layer = learn_conv_layer(f.images, f.markers, cfg, 1);
  // 4 strokes per class, so at most 12 filters each.
  CHECK(layer.bank.size() <= 36);
  std::vector<int> per_label(4, 0);
  for (const auto& filter : layer.bank.filters()) {
    ++per_label[static_cast<std::size_t>(filter.source.label)];
    CHECK(filter.source.image_id.empty());
  }
  for (Label l = 1; l <= 3; ++l) CHECK(per_label[static_cast<std::size_t>(l)] > 0);
}

TEST_CASE("conv layer learning rejects bad input") {
  const auto f = marked_textures(1, 20);
  ConvLayerConfig cfg;
  CHECK(code_of([&] { learn_conv_layer(std::vector<ImageTensor>{}, std::vector<MarkerSet>{}, cfg, 1); }) ==
        ErrorCode::Argument);
  std::vector<MarkerSet> empty(f.images.size(), MarkerSet{"x", "y", {}});
  CHECK(code_of([&] { learn_conv_layer(f.images, empty, cfg, 1); }) == ErrorCode::Validation);
  auto bad = f.markers;
  bad[0].strokes[0].pixels.push_back({20, 0});
  CHECK(code_of([&] { learn_conv_layer(f.images, bad, cfg, 1); }) == ErrorCode::Validation);
  cfg.k = 4;
  CHECK_THROWS_AS(learn_conv_layer(f.images, f.markers, cfg, 1), Error);
}

TEST_CASE("activation maps match normalize, correlate, rectify, pool") {
  const auto f = marked_textures(1, 30);
  ConvLayerConfig cfg;
  cfg.filters_per_marker = 3;
  cfg.pool = {5, 3};
  const auto layer = learn_conv_layer(f.images, f.markers, cfg, 9);
  for (std::size_t cs : {1, 2})
    for (std::size_t ps : {1, 3}) {
      const auto& img = f.images[1];
      oracle::Grid g = oracle::from_tensor(img);
      for (std::size_t r = 0; r < g.h; ++r)
        for (std::size_t c = 0; c < g.w; ++c)
          for (std::size_t ch = 0; ch < g.c; ++ch)
            g(r, c, ch) = (g(r, c, ch) - layer.stats.mean[ch]) / (layer.stats.stddev[ch] + layer.stats.epsilon);
      std::vector<std::vector<double>> filters;
      for (const auto& fl : layer.bank.filters()) filters.push_back(fl.weights);
      auto conv = oracle::cross_correlate(g, filters, cfg.k, cs);
      for (auto& v : conv.v) v = std::max(v, 0.0);
      const auto expect = oracle::max_pool(conv, 5, 3, ps);
      const auto got = apply_conv_layer(layer, img, cs, ps);
      REQUIRE(got.height() == expect.h);
      REQUIRE(got.width() == expect.w);
      REQUIRE(got.channels() == expect.c);
      double diff = 0.0;
      for (std::size_t i = 0; i < expect.v.size(); ++i) diff = std::max(diff, std::abs(expect.v[i] - got.data()[i]));
      CHECK(diff < 1e-4);
    }
}

TEST_CASE("training forward keeps resolution") {
  const auto f = marked_textures(1, 24);
  ConvLayerConfig cfg;
  cfg.filters_per_marker = 2;
  cfg.pool_stride = 4;
  std::vector<ConvLayer> layers{learn_conv_layer(f.images, f.markers, cfg, 1)};
  const auto out = forward_training(layers, f.images[0]);
  CHECK(out.height() == 24);
  CHECK(out.width() == 24);
  CHECK(out.channels() == layers[0].bank.size());
}

TEST_CASE("representative selection is deterministic and per class") {
  std::vector<CatalogEntry> entries;
  std::vector<FeatureVector> flat;
  std::vector<std::size_t> z1;
  std::mt19937 gen(3);
  std::normal_distribution<float> nd;
  for (std::size_t i = 0; i < 30; ++i) {
    const Label l = static_cast<Label>(1 + i % 3);
    entries.push_back({"x" + std::to_string(i) + ".png", l, "x" + std::to_string(i)});
    z1.push_back(i);
    flat.push_back({nd(gen) + 5.0f * l, nd(gen), nd(gen)});
  }
  const DatasetCatalog catalog(entries, {"a", "b", "c"});
  SelectionOptions opt;
  opt.per_class = {2, 1, 3};
  opt.seed = 7;
  const auto sel = select_images(flat, z1, catalog, opt);
  CHECK(sel.size() == 6);
  CHECK(std::is_sorted(sel.begin(), sel.end()));
  std::vector<int> counts(4, 0);
  for (auto i : sel) ++counts[static_cast<std::size_t>(catalog.entry(i).label)];
  CHECK(counts[1] == 2);
  CHECK(counts[2] == 1);
  CHECK(counts[3] == 3);
  CHECK(select_images(flat, z1, catalog, opt) == sel);

  opt.per_class = {100};
  set_log_sink([](LogLevel, const std::string&) {});
  CHECK(select_images(flat, z1, catalog, opt).size() == 30);
  set_log_sink(nullptr);
  opt.per_class = {1, 2};
  CHECK_THROWS_AS(select_images(flat, z1, catalog, opt), Error);
}

TEST_CASE("neuron counts from a count or a fraction") {
  CHECK(NeuronsPerClass{std::size_t{3}}.for_class(10) == 3);
  CHECK(NeuronsPerClass{std::size_t{0}}.for_class(10) == 1);
  CHECK(NeuronsPerClass{0.5}.for_class(10) == 5);
  CHECK(NeuronsPerClass{0.25}.for_class(10) == 3);
  CHECK(NeuronsPerClass{0.01}.for_class(10) == 1);
  CHECK_THROWS_AS(NeuronsPerClass{-1.0}.for_class(10), Error);
}

TEST_CASE("FC layer: unit neurons, labels, ReLU of standardized inner products") {
  std::mt19937 gen(8);
  std::normal_distribution<float> nd;
  std::vector<FeatureVector> feats;
  std::vector<Label> labels;
  for (int i = 0; i < 20; ++i) {
    const Label l = static_cast<Label>(1 + i % 2);
    feats.push_back({nd(gen) + 3.0f * l, nd(gen), nd(gen) - l});
    labels.push_back(l);
  }
  const auto fc = learn_fc_layer(feats, labels, NeuronsPerClass{0.3}, 1);
  CHECK(fc.neurons.size() == 6);
  for (const auto& n : fc.neurons) CHECK(norm(n.weights) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(fc.neurons.front().label == 1);
  CHECK(fc.neurons.back().label == 2);
  const auto out = apply_fc_layer(fc, feats[3]);
  const auto z = apply_zscore(feats[3], fc.stats);
  for (std::size_t i = 0; i < out.size(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 3; ++j) s += fc.neurons[i].weights[j] * z[j];
    CHECK(out[i] == doctest::Approx(std::max(s, 0.0)).epsilon(1e-5));
  }
  CHECK_THROWS_AS(learn_fc_layer(std::vector<FeatureVector>{{1.0f}}, std::vector<Label>{1}, {}, 1), Error);
}

TEST_CASE("model container round trips bit-exactly") {
  const auto model = small_model();
  check_unit_norm(model);
  const auto bytes = serialize_model(model);
  const auto back = deserialize_model(bytes);
  CHECK(back == model);
  CHECK(serialize_model(back) == bytes);

  synthetic::TempDir dir;
  save_model(model, dir.path() / "m.flim");
  CHECK(load_model(dir.path() / "m.flim") == model);
  CHECK(code_of([&] { load_model(dir.path() / "none.flim"); }) == ErrorCode::Io);
}

TEST_CASE("corrupted containers are rejected with distinct codes") {
  const auto bytes = serialize_model(small_model());
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK(code_of([&] { deserialize_model(bad_magic); }) == ErrorCode::Format);
  auto bad_version = bytes;
  bad_version[8] = 2;
  CHECK(code_of([&] { deserialize_model(bad_version); }) == ErrorCode::Version);
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  CHECK(code_of([&] { deserialize_model(flipped); }) == ErrorCode::Format);
  for (std::size_t cut : {std::size_t{0}, std::size_t{10}, bytes.size() / 3, bytes.size() - 1}) {
    const std::span<const std::uint8_t> prefix(bytes.data(), cut);
    CHECK(code_of([&] { deserialize_model(prefix); }) == ErrorCode::Format);
  }
}

TEST_CASE("unit norm check flags drifted weights") {
  auto model = small_model();
  CHECK_NOTHROW(check_unit_norm(model));
  model.fc->neurons[0].weights[0] += 0.1;
  CHECK_THROWS_AS(check_unit_norm(model), Error);
}
