#include "flim/normalization.hpp"

#include <cmath>

#include "flim/error.hpp"
#include "flim/log.hpp"

namespace flim {

ChannelStats fit_marker_stats(std::span<const ImageTensor> images, std::span<const MarkerSet> markers) {
  require(images.size() == markers.size(), ErrorCode::Argument, "one marker set per image is required");
  require(!images.empty(), ErrorCode::Argument, "no marker images");
  const std::size_t m = images.front().channels();
  for (const auto& img : images)
    require(img.channels() == m, ErrorCode::Shape, "marker images disagree on channel count");

  // Two passes (mean, then squared deviations) for stability.
  std::vector<double> sum(m, 0.0);
  std::size_t count = 0;
  for (std::size_t i = 0; i < images.size(); ++i)
    for (const auto& stroke : markers[i].strokes)
      for (const auto& p : stroke.pixels) {
        require(images[i].contains(p), ErrorCode::Validation,
                "marker pixel (" + std::to_string(p.row) + "," + std::to_string(p.col) + ") outside image " +
                    markers[i].image_id);
        auto px = images[i].pixel(static_cast<std::size_t>(p.row), static_cast<std::size_t>(p.col));
        for (std::size_t ch = 0; ch < m; ++ch) sum[ch] += px[ch];
        ++count;
      }
  require(count > 0, ErrorCode::Validation, "no marker pixels to fit normalization statistics");

  ChannelStats stats;
  stats.mean.resize(m);
  stats.stddev.assign(m, 0.0);
  for (std::size_t ch = 0; ch < m; ++ch) stats.mean[ch] = sum[ch] / static_cast<double>(count);
  if (count == 1) {
    log_warning("a single marker pixel was drawn; channel standard deviations are zero");
    return stats;
  }
  std::vector<double> sq(m, 0.0);
  for (std::size_t i = 0; i < images.size(); ++i)
    for (const auto& stroke : markers[i].strokes)
      for (const auto& p : stroke.pixels) {
        auto px = images[i].pixel(static_cast<std::size_t>(p.row), static_cast<std::size_t>(p.col));
        for (std::size_t ch = 0; ch < m; ++ch) {
          const double d = px[ch] - stats.mean[ch];
          sq[ch] += d * d;
        }
      }
  for (std::size_t ch = 0; ch < m; ++ch) stats.stddev[ch] = std::sqrt(sq[ch] / static_cast<double>(count));
  return stats;
}

void apply_marker_norm_inplace(ImageTensor& image, const ChannelStats& stats) {
  const std::size_t m = image.channels();
  require(m == stats.channels(), ErrorCode::Shape,
          "image has " + std::to_string(m) + " channels, statistics have " + std::to_string(stats.channels()));
  std::vector<double> inv(m);
  for (std::size_t ch = 0; ch < m; ++ch) inv[ch] = 1.0 / (stats.stddev[ch] + stats.epsilon);
  auto data = image.data();
  for (std::size_t i = 0; i < data.size(); i += m)
    for (std::size_t ch = 0; ch < m; ++ch)
      data[i + ch] = static_cast<float>((static_cast<double>(data[i + ch]) - stats.mean[ch]) * inv[ch]);
}

ImageTensor apply_marker_norm(const ImageTensor& image, const ChannelStats& stats) {
  ImageTensor out = image;
  apply_marker_norm_inplace(out, stats);
  return out;
}

VectorStats fit_zscore(std::span<const FeatureVector> vectors) {
  require(vectors.size() >= 2, ErrorCode::Argument, "z-score fitting needs at least 2 vectors");
  const std::size_t n = vectors.front().size();
  for (const auto& v : vectors)
    require(v.size() == n, ErrorCode::Shape,
            "feature dimension " + std::to_string(v.size()) + " differs from " + std::to_string(n));
  VectorStats stats;
  stats.mean.assign(n, 0.0);
  stats.stddev.assign(n, 0.0);
  for (const auto& v : vectors)
    for (std::size_t j = 0; j < n; ++j) stats.mean[j] += v[j];
  const double count = static_cast<double>(vectors.size());
  for (auto& mu : stats.mean) mu /= count;
  for (const auto& v : vectors)
    for (std::size_t j = 0; j < n; ++j) {
      const double d = v[j] - stats.mean[j];
      stats.stddev[j] += d * d;
    }
  for (auto& s : stats.stddev) s = std::sqrt(s / count);
  return stats;
}

void apply_zscore_inplace(std::span<float> vector, const VectorStats& stats) {
  require(vector.size() == stats.dimension(), ErrorCode::Shape,
          "feature dimension " + std::to_string(vector.size()) + " does not match fitted " +
              std::to_string(stats.dimension()));
  for (std::size_t j = 0; j < vector.size(); ++j)
    vector[j] = static_cast<float>((static_cast<double>(vector[j]) - stats.mean[j]) / (stats.stddev[j] + stats.epsilon));
}

FeatureVector apply_zscore(std::span<const float> vector, const VectorStats& stats) {
  FeatureVector out(vector.begin(), vector.end());
  apply_zscore_inplace(out, stats);
  return out;
}

}  // namespace flim
