#include "flim/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "flim/error.hpp"
#include "flim/log.hpp"
#include "flim/rng.hpp"

namespace flim {

void ConvLayerConfig::validate() const {
  require(k >= 1 && k % 2 == 1, ErrorCode::Argument, "filter size k must be odd, got " + std::to_string(k));
  require(filters_per_marker >= 1, ErrorCode::Argument, "f_m must be >= 1");
  require(pool.height >= 1 && pool.width >= 1, ErrorCode::Argument, "pool size must be >= 1x1");
  require(pool_stride >= 1 && conv_stride >= 1, ErrorCode::Argument, "strides must be >= 1");
}

namespace {

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Scales to unit length; returns false for a zero vector.
bool normalize_unit(std::vector<double>& v) {
  const double n = norm2(v);
  if (!(n > 0.0) || !std::isfinite(n)) return false;
  for (auto& x : v) x /= n;
  return true;
}

}  // namespace

// --- representative image selection -------------------------------------------

std::vector<std::size_t> select_images(std::span<const FeatureVector> flattened, std::span<const std::size_t> z1,
                                       const DatasetCatalog& catalog, const SelectionOptions& options) {
  require(flattened.size() == z1.size(), ErrorCode::Argument, "one flattened image per Z1 index is required");
  const int c = catalog.class_count();
  require(options.per_class.size() == 1 || options.per_class.size() == static_cast<std::size_t>(c),
          ErrorCode::Argument, "per_class needs 1 value or one per class");
  for (auto v : options.per_class) require(v >= 1, ErrorCode::Argument, "per_class must be >= 1");

  const VectorStats stats = fit_zscore(flattened);
  std::vector<std::size_t> selected;
  for (Label l = 1; l <= c; ++l) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < z1.size(); ++i)
      if (catalog.entry(z1[i]).label == l) rows.push_back(i);
    if (rows.empty()) {
      log_warning("class " + std::to_string(l) + " has no images in Z1; nothing selected");
      continue;
    }
    const std::size_t want =
        options.per_class.size() == 1 ? options.per_class[0] : options.per_class[static_cast<std::size_t>(l - 1)];
    RowMatrix points(0, stats.dimension());
    points.reserve_rows(rows.size());
    for (auto r : rows) points.append_row(apply_zscore(flattened[r], stats));

    KMeansOptions km;
    km.clamp_k = true;
    const auto result = kmeans(points, want, derive_seed(options.seed, "select", static_cast<std::uint64_t>(l)), km);

    std::vector<bool> taken(rows.size(), false);
    for (const auto& center : result.centers) {
      std::size_t best = rows.size();
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (taken[r]) continue;
        const double d = squared_distance(points.row(r), center);
        if (d < best_d) {
          best_d = d;
          best = r;
        }
      }
      taken[best] = true;
      selected.push_back(z1[rows[best]]);
    }
  }
  std::sort(selected.begin(), selected.end());
  return selected;
}

// --- conv layers -----------------------------------------------------------------

RowMatrix stroke_patches(const ImageTensor& image, const Stroke& stroke, std::size_t k) {
  const std::size_t len = k * k * image.channels();
  RowMatrix patches(0, len);
  patches.reserve_rows(stroke.pixels.size());
  std::vector<float> buffer(len);
  for (const auto& p : stroke.pixels) {
    require(image.contains(p), ErrorCode::Validation,
            "marker pixel (" + std::to_string(p.row) + "," + std::to_string(p.col) + ") outside the image");
    gather_patch(image, p, k, buffer);
    patches.append_row(buffer);
  }
  return patches;
}

ConvLayer learn_conv_layer(std::span<const ImageTensor> inputs, std::span<const MarkerSet> markers,
                           const ConvLayerConfig& config, std::uint64_t seed) {
  config.validate();
  require(!inputs.empty(), ErrorCode::Argument, "no marker images");
  require(inputs.size() == markers.size(), ErrorCode::Argument, "one marker set per image is required");
  const std::size_t m = inputs.front().channels();
  for (const auto& img : inputs) require(img.channels() == m, ErrorCode::Shape, "marker images disagree on channels");
  std::size_t stroke_count = 0;
  for (const auto& ms : markers) stroke_count += ms.strokes.size();
  require(stroke_count > 0, ErrorCode::Validation, "no marker strokes");

  ConvLayer layer;
  layer.config = config;
  layer.stats = fit_marker_stats(inputs, markers);
  layer.bank = FilterBank(config.k, m);

  std::vector<ImageTensor> normalized;
  normalized.reserve(inputs.size());
  for (const auto& img : inputs) normalized.push_back(apply_marker_norm(img, layer.stats));

  KMeansOptions km;
  km.clamp_k = true;
  auto add_centers = [&](const KMeansResult& result, const FilterSource& source) {
    for (const auto& center : result.centers) {
      Filter filter{center, source};
      if (!normalize_unit(filter.weights)) {
        log_warning("dropping a zero filter estimated from stroke " + std::to_string(source.stroke) + " of " +
                    source.image_id);
        continue;
      }
      layer.bank.add(std::move(filter));
    }
  };

  if (config.scope == ClusterScope::Marker) {
    std::uint64_t stream = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      for (std::size_t s = 0; s < markers[i].strokes.size(); ++s, ++stream) {
        const auto& stroke = markers[i].strokes[s];
        const auto patches = stroke_patches(normalized[i], stroke, config.k);
        const auto result = kmeans(patches, config.filters_per_marker, derive_seed(seed, "filters", stream), km);
        add_centers(result, {stroke.label, markers[i].image_id, s});
      }
    }
  } else {
    std::map<Label, std::pair<RowMatrix, std::size_t>> by_class;
    for (std::size_t i = 0; i < inputs.size(); ++i)
      for (const auto& stroke : markers[i].strokes) {
        auto [it, inserted] = by_class.try_emplace(stroke.label, RowMatrix(0, config.k * config.k * m), 0);
        const auto patches = stroke_patches(normalized[i], stroke, config.k);
        for (std::size_t r = 0; r < patches.rows(); ++r) it->second.first.append_row(patches.row(r));
        ++it->second.second;
      }
    for (const auto& [label, entry] : by_class) {
      const auto result = kmeans(entry.first, config.filters_per_marker * entry.second,
                                 derive_seed(seed, "class-filters", static_cast<std::uint64_t>(label)), km);
      add_centers(result, {label, "", 0});
    }
  }
  require(layer.bank.size() > 0, ErrorCode::Validation, "no filters could be estimated from the markers");
  return layer;
}

ImageTensor apply_conv_layer(const ConvLayer& layer, const ImageTensor& input, std::size_t conv_stride,
                             std::size_t pool_stride) {
  ImageTensor x = apply_marker_norm(input, layer.stats);
  x = convolve(x, layer.bank, conv_stride);
  relu_inplace(x);
  return max_pool(x, layer.config.pool, pool_stride);
}

ImageTensor forward_training(std::span<const ConvLayer> layers, const ImageTensor& image) {
  ImageTensor x = image;
  for (const auto& layer : layers) x = apply_conv_layer(layer, x, 1, 1);
  return x;
}

std::vector<ImageTensor> forward_extract_layers(const FlimModel& model, const ImageTensor& image) {
  if (!model.layers.empty())
    require(image.channels() == model.layers.front().stats.channels(), ErrorCode::Shape,
            "image has " + std::to_string(image.channels()) + " channels, the model expects " +
                std::to_string(model.layers.front().stats.channels()));
  std::vector<ImageTensor> outputs;
  outputs.reserve(model.layers.size());
  const ImageTensor* x = &image;
  for (const auto& layer : model.layers) {
    outputs.push_back(apply_conv_layer(layer, *x, layer.config.conv_stride, layer.config.pool_stride));
    x = &outputs.back();
  }
  return outputs;
}

FeatureVector forward_extract(const FlimModel& model, const ImageTensor& image) {
  FeatureVector features;
  if (model.layers.empty()) {
    features = flatten(image);
  } else {
    auto outputs = forward_extract_layers(model, image);
    features = flatten(outputs.back());
  }
  if (model.fc) return apply_fc_layer(*model.fc, features);
  return features;
}

// --- fully connected layer ----------------------------------------------------------

std::size_t NeuronsPerClass::for_class(std::size_t class_size) const {
  if (const auto* count = std::get_if<std::size_t>(&value)) return std::max<std::size_t>(*count, 1);
  const double fraction = std::get<double>(value);
  require(fraction > 0.0, ErrorCode::Argument, "neuron fraction must be positive");
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(class_size) - 1e-9)));
}

FcLayer learn_fc_layer(std::span<const FeatureVector> features, std::span<const Label> labels, NeuronsPerClass neurons,
                       std::uint64_t seed) {
  require(features.size() == labels.size(), ErrorCode::Argument, "one label per feature vector is required");
  std::map<Label, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < labels.size(); ++i) members[labels[i]].push_back(i);
  for (const auto& [label, rows] : members)
    require(rows.size() >= 2, ErrorCode::Argument,
            "class " + std::to_string(label) + " has " + std::to_string(rows.size()) + " feature(s); 2 are needed");

  FcLayer fc;
  fc.stats = fit_zscore(features);
  KMeansOptions km;
  km.clamp_k = true;
  for (const auto& [label, rows] : members) {
    RowMatrix points(0, fc.stats.dimension());
    points.reserve_rows(rows.size());
    for (auto r : rows) points.append_row(apply_zscore(features[r], fc.stats));
    const auto result =
        kmeans(points, neurons.for_class(rows.size()), derive_seed(seed, "neurons", static_cast<std::uint64_t>(label)), km);
    for (const auto& center : result.centers) {
      Neuron neuron{center, label};
      if (!normalize_unit(neuron.weights)) {
        log_warning("dropping a zero neuron for class " + std::to_string(label));
        continue;
      }
      fc.neurons.push_back(std::move(neuron));
    }
  }
  require(!fc.neurons.empty(), ErrorCode::Validation, "no neurons could be estimated");
  return fc;
}

FeatureVector apply_fc_layer(const FcLayer& fc, std::span<const float> input) {
  const FeatureVector z = apply_zscore(input, fc.stats);
  FeatureVector out(fc.neurons.size());
  for (std::size_t i = 0; i < fc.neurons.size(); ++i) {
    const auto& w = fc.neurons[i].weights;
    double s = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j) s += w[j] * z[j];
    out[i] = static_cast<float>(s > 0.0 ? s : 0.0);
  }
  return out;
}

void check_unit_norm(const FlimModel& model, double tolerance) {
  for (std::size_t l = 0; l < model.layers.size(); ++l)
    for (std::size_t f = 0; f < model.layers[l].bank.size(); ++f) {
      const double n = norm2(model.layers[l].bank[f].weights);
      require(std::abs(n - 1.0) <= tolerance, ErrorCode::Validation,
              "layer " + std::to_string(l + 1) + " filter " + std::to_string(f) + " has norm " + std::to_string(n));
    }
  if (model.fc)
    for (std::size_t i = 0; i < model.fc->neurons.size(); ++i) {
      const double n = norm2(model.fc->neurons[i].weights);
      require(std::abs(n - 1.0) <= tolerance, ErrorCode::Validation,
              "neuron " + std::to_string(i) + " has norm " + std::to_string(n));
    }
}

}  // namespace flim
