#pragma once

#include <span>
#include <vector>

#include "flim/markers.hpp"
#include "flim/tensor.hpp"

namespace flim {

inline constexpr double kDefaultEpsilon = 1e-8;

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;  // population
  double epsilon = kDefaultEpsilon;

  std::size_t channels() const { return mean.size(); }
  friend bool operator==(const ChannelStats&, const ChannelStats&) = default;
};

struct VectorStats {
  std::vector<double> mean;
  std::vector<double> stddev;  // population
  double epsilon = kDefaultEpsilon;

  std::size_t dimension() const { return mean.size(); }
  friend bool operator==(const VectorStats&, const VectorStats&) = default;
};

// Mean and population std per channel over every marker pixel of every image.
// Duplicate pixels count once per occurrence.
ChannelStats fit_marker_stats(std::span<const ImageTensor> images, std::span<const MarkerSet> markers);

// (x - mean) / (stddev + epsilon) per channel.
ImageTensor apply_marker_norm(const ImageTensor& image, const ChannelStats& stats);
void apply_marker_norm_inplace(ImageTensor& image, const ChannelStats& stats);

VectorStats fit_zscore(std::span<const FeatureVector> vectors);
FeatureVector apply_zscore(std::span<const float> vector, const VectorStats& stats);
void apply_zscore_inplace(std::span<float> vector, const VectorStats& stats);

}  // namespace flim
