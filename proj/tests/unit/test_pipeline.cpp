#include <fstream>
#include <functional>
#include <map>

#include "doctest.h"
#include "flim/error.hpp"
#include "flim/log.hpp"
#include "flim/pipeline.hpp"
#include "synthetic.hpp"

using namespace flim;
namespace fs = std::filesystem;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Internal;
}

constexpr const char* kConfig = R"({
  "dataset": {"root": "images", "image_size": [48, 48]},
  "split": {"train_fraction": 0.5},
  "select": {"per_class": 1},
  "markers_dir": "markers",
  "layers": [{"k": 3, "f_m": 3, "poolsize": [3, 3], "pool_stride": 4},
             {"k": 3, "f_m": 2, "poolsize": 3, "pool_stride": 2}],
  "fc": {"neurons_per_class": {"fraction": 0.5}},
  "seed": 5,
  "output_dir": "out"
})";

void write_markers(const Experiment& ex) {
  fs::create_directories(ex.config().markers_dir);
  for (const auto& e : ex.manifest(ex.load_split()))
    save_markers(synthetic::scripted_markers(e.id, e.label, 48, 48), ex.marker_path(e.id));
}

// One fully run experiment shared by the read-only checks below.
struct Workspace {
  synthetic::TempDir dir;
  ExperimentConfig config;
  Workspace() {
    synthetic::write_texture_dataset(dir.path() / "images", 8, 48, 48, 3);
    config = parse_config(kConfig, dir.path());
    Experiment ex(config);
    ex.run_split();
    ex.run_select();
    write_markers(ex);
    ex.run_train();
    ex.run_extract();
    ex.run_evaluate();
  }
};

const Workspace& workspace() {
  static Workspace ws;
  return ws;
}

std::string slurp(const fs::path& p) { return read_file(p); }

}  // namespace

TEST_CASE("config parsing: fields, defaults, relative paths") {
  const auto c = parse_config(kConfig, "/base");
  CHECK(c.dataset_root == fs::path("/base/images"));
  CHECK(c.markers_dir == fs::path("/base/markers"));
  CHECK(c.output_dir == fs::path("/base/out"));
  CHECK(c.image_size.height == 48);
  CHECK(c.train_fraction == 0.5);
  REQUIRE(c.layers.size() == 2);
  CHECK(c.layers[0].pool == PoolSize{3, 3});
  CHECK(c.layers[1].pool == PoolSize{3, 3});
  CHECK(c.layers[0].pool_stride == 4);
  CHECK(c.layers[0].scope == ClusterScope::Marker);
  REQUIRE(c.fc.has_value());
  CHECK(std::get<double>(c.fc->neurons.value) == 0.5);
  CHECK(c.seeds.split == 5);
  CHECK(c.seeds.fc == 5);
  CHECK(c.svm.C == 100.0);
  CHECK(c.all_heads);

  const auto d = parse_config(R"({"dataset": {"csv": "/abs/list.csv"}, "layers": [{}],
    "select": {"per_class": [1, 2]}, "seeds": {"split": 3, "fc": 9},
    "svm": {"kernel": "sigma", "scale": 2.0, "C": 10}})", "/base");
  CHECK(d.dataset_csv == fs::path("/abs/list.csv"));
  CHECK(d.per_class == std::vector<std::size_t>{1, 2});
  CHECK(d.seeds.split == 3);
  CHECK(d.seeds.select == 1);
  CHECK(d.seeds.fc == 9);
  CHECK(!d.fc.has_value());
  CHECK(d.svm.gamma_for(10) == doctest::Approx(0.125));
  CHECK(parse_config(kConfig).svm.gamma_for(8) == doctest::Approx(0.125));
}

TEST_CASE("config errors") {
  CHECK(code_of([] { parse_config("{"); }) == ErrorCode::Format);
  CHECK(code_of([] { parse_config(R"({"layers": []})"); }) == ErrorCode::Format);
  CHECK_THROWS_AS(parse_config(R"({"dataset": {"root": "x"}, "layers": [{"cluster_scope": "pixel"}]})"), Error);
  CHECK_THROWS_AS(parse_config(R"({"dataset": {"root": "x"}, "layers": [{}], "svm": {"kernel": "poly"}})"), Error);
  auto c = parse_config(kConfig, "/b");
  c.layers[0].k = 4;
  CHECK_THROWS_AS(c.validate(), Error);
  c = parse_config(kConfig, "/b");
  c.train_fraction = 1.5;
  CHECK_THROWS_AS(c.validate(), Error);
  c = parse_config(kConfig, "/b");
  c.dataset_root.clear();
  CHECK_THROWS_AS(c.validate(), Error);
  CHECK(code_of([] { load_config("/nonexistent/flim.json"); }) != ErrorCode::Internal);
}

TEST_CASE("split files round trip and a missing one is NotFound") {
  synthetic::TempDir dir;
  SplitSpec s;
  s.train_fraction = 0.4;
  s.seed = 77;
  s.z1 = {0, 3, 4};
  s.z2 = {1, 2, 5};
  s.zs = {3};
  save_split(s, dir.path() / "split.json");
  const auto back = load_split_file(dir.path() / "split.json");
  CHECK(back.z1 == s.z1);
  CHECK(back.z2 == s.z2);
  CHECK(back.zs == s.zs);
  CHECK(back.seed == 77);
  CHECK(code_of([&] { load_split_file(dir.path() / "none.json"); }) == ErrorCode::NotFound);
}

TEST_CASE("training refuses missing markers unless allowed") {
  synthetic::TempDir dir;
  synthetic::write_texture_dataset(dir.path() / "images", 4, 48, 48, 1);
  auto config = parse_config(kConfig, dir.path());
  config.per_class = {2};
  Experiment ex(config);
  ex.run_split();
  const auto zs = ex.run_select();
  REQUIRE(zs.size() == 6);
  try {
    ex.run_train();
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("missing marker files") != std::string::npos);
    CHECK(std::string(e.what()).find(zs[0].id) != std::string::npos);
  }
  // One image per class is enough when the rest are skipped.
  fs::create_directories(config.markers_dir);
  std::map<Label, bool> done;
  for (const auto& e : zs)
    if (!done[e.label]) {
      done[e.label] = true;
      save_markers(synthetic::scripted_markers(e.id, e.label, 48, 48), ex.marker_path(e.id));
    }
  std::vector<std::string> warnings;
  set_log_sink([&](LogLevel level, const std::string& m) {
    if (level == LogLevel::Warning) warnings.push_back(m);
  });
  TrainOptions opt;
  opt.require_all_markers = false;
  std::vector<std::string> stages;
  opt.progress = [&](const TrainProgress& p) { stages.push_back(p.stage); };
  const auto model = ex.run_train(opt);
  set_log_sink(nullptr);
  CHECK(!warnings.empty());
  CHECK(!stages.empty());
  CHECK(model.layers.size() == 2);
}

TEST_CASE("full pipeline writes every artifact") {
  const auto& ws = workspace();
  Experiment ex(ws.config);
  for (const auto& p : {ex.split_path(), ex.manifest_path(), ex.model_path(), ex.features_path(),
                        ex.report_json_path(), ex.report_text_path(), ex.predictions_path()})
    CHECK(fs::exists(p));
  const auto model = load_model(ex.model_path());
  CHECK(model.class_count == 3);
  CHECK(model.class_names == synthetic::texture_classes());
  REQUIRE(model.heads.size() == 3);
  CHECK(model.heads[0].name == "CL1");
  CHECK(model.heads[1].name == "CL2");
  CHECK(model.heads[2].name == "FC");
  CHECK(model.provenance.find("split_seed") != std::string::npos);
  check_unit_norm(model);
}

TEST_CASE("report accuracy equals a recount of predictions.csv") {
  const auto& ws = workspace();
  Experiment ex(ws.config);
  const auto report = report_from_json(slurp(ex.report_json_path()));
  const auto preds = read_predictions_csv(ex.predictions_path());
  const auto split = ex.load_split();
  CHECK(report.test_images == split.z2.size());
  CHECK(report.train_images == split.z1.size());
  CHECK(preds.size() == split.z2.size() * report.rows.size());

  for (const auto& row : report.rows) {
    std::size_t correct = 0, total = 0;
    for (const auto& p : preds)
      if (p.head == row.config) {
        ++total;
        correct += p.truth == p.predicted;
        CHECK(row.confusion.at(p.truth - 1).at(p.predicted - 1) > 0);
      }
    REQUIRE(total == split.z2.size());
    CHECK(row.accuracy == doctest::Approx(double(correct) / double(total)));

    std::vector<std::size_t> class_sizes(3, 0);
    for (auto i : split.z2) ++class_sizes[static_cast<std::size_t>(ex.catalog().entry(i).label - 1)];
    std::size_t diagonal = 0;
    for (std::size_t t = 0; t < 3; ++t) {
      std::size_t sum = 0;
      for (auto v : row.confusion[t]) sum += v;
      CHECK(sum == class_sizes[t]);
      diagonal += row.confusion[t][t];
    }
    CHECK(diagonal == correct);
  }
}

TEST_CASE("features.bin holds every Z1 and Z2 image") {
  const auto& ws = workspace();
  Experiment ex(ws.config);
  const auto split = ex.load_split();
  const auto records = read_features(ex.features_path());
  REQUIRE(records.size() == split.z1.size() + split.z2.size());
  const auto model = load_model(ex.model_path());
  std::size_t z1 = 0;
  for (const auto& r : records) {
    CHECK(r.label == ex.catalog().entry(r.index).label);
    z1 += r.set == 1;
    CHECK(r.values.size() == records.front().values.size());
  }
  CHECK(z1 == split.z1.size());
  // The dump is the forward pass of the saved model.
  const auto& r = records.back();
  CHECK(forward_extract(model, ex.load_image(r.index)) == r.values);

  synthetic::TempDir dir;
  std::ofstream(dir.path() / "bad.bin") << "NOTFEATS";
  CHECK(code_of([&] { read_features(dir.path() / "bad.bin"); }) == ErrorCode::Format);
}

TEST_CASE("a rerun with the same seeds is byte identical") {
  const auto& ws = workspace();
  auto config = ws.config;
  config.output_dir = ws.dir.path() / "rerun";
  Experiment ex(config);
  ex.run_split();
  ex.run_select();
  ex.run_train();
  ex.run_evaluate();
  Experiment first(ws.config);
  CHECK(slurp(ex.model_path()) == slurp(first.model_path()));
  CHECK(slurp(ex.report_json_path()) == slurp(first.report_json_path()));
  CHECK(slurp(ex.predictions_path()) == slurp(first.predictions_path()));
}

TEST_CASE("report json and table") {
  EvaluationReport r;
  r.split_seed = 4;
  r.class_names = {"a", "b"};
  r.rows = {{"CL1", 0.75, {{3, 1}, {1, 3}}}, {"FC", 1.0, {{4, 0}, {0, 4}}}};
  r.train_images = 4;
  r.test_images = 8;
  r.feature_dimensions = {100, 6};
  const auto back = report_from_json(report_to_json(r));
  CHECK(back.rows.size() == 2);
  CHECK(back.rows[0].confusion == r.rows[0].confusion);
  CHECK(back.feature_dimensions == r.feature_dimensions);
  CHECK(report_to_json(back) == report_to_json(r));

  const auto table = report_to_table(r);
  CHECK(table.find("split4") != std::string::npos);
  CHECK(table.find("0.7500") != std::string::npos);
  CHECK(table.find("1.0000") != std::string::npos);
  // CL2 is absent and shows as a dash.
  CHECK(table.find("CL2") != std::string::npos);
  CHECK(table.find(" -") != std::string::npos);
  CHECK_THROWS_AS(report_from_json("[]"), Error);
}
