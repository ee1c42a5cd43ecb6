#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "flim/tensor.hpp"

namespace flim {

// k x k x m neighborhood in (row, col, channel) order, zero filled outside
// the image.
struct Patch {
  std::size_t k = 0;
  std::size_t channels = 0;
  std::vector<float> values;
};

struct FilterSource {
  Label label = 0;
  std::string image_id;
  std::size_t stroke = 0;
  friend bool operator==(const FilterSource&, const FilterSource&) = default;
};

struct Filter {
  std::vector<double> weights;  // same layout as Patch::values
  FilterSource source;
  friend bool operator==(const Filter&, const Filter&) = default;
};

class FilterBank {
 public:
  FilterBank() = default;
  FilterBank(std::size_t k, std::size_t channels) : k_(k), channels_(channels) {}

  std::size_t k() const { return k_; }
  std::size_t channels() const { return channels_; }
  std::size_t size() const { return filters_.size(); }
  std::size_t filter_length() const { return k_ * k_ * channels_; }

  const std::vector<Filter>& filters() const { return filters_; }
  const Filter& operator[](std::size_t i) const { return filters_[i]; }

  // Throws Shape on a length mismatch.
  void add(Filter filter);

  friend bool operator==(const FilterBank&, const FilterBank&) = default;

 private:
  std::size_t k_ = 0;
  std::size_t channels_ = 0;
  std::vector<Filter> filters_;
};

struct PoolSize {
  std::size_t height = 1;
  std::size_t width = 1;
  friend bool operator==(const PoolSize&, const PoolSize&) = default;
};

Patch extract_patch(const ImageTensor& image, Pixel center, std::size_t k);

// Writes the patch at `center` into `out` (length k*k*m) without allocating.
void gather_patch(const ImageTensor& image, Pixel center, std::size_t k, std::span<float> out);

// Cross-correlation with zero padding. Output pixel q reads the patch centered
// at input pixel q * stride; output size is ceil(H/stride) x ceil(W/stride).
ImageTensor convolve(const ImageTensor& image, const FilterBank& bank, std::size_t stride = 1);

ImageTensor relu(const ImageTensor& image);
void relu_inplace(ImageTensor& image);

// Window for output q covers input rows q*stride - (ph-1)/2 .. + ph-1, clamped
// to the image; the same along columns.
ImageTensor max_pool(const ImageTensor& image, PoolSize pool, std::size_t stride);

// Row-major, channel-last; the layout is part of the model format.
FeatureVector flatten(const ImageTensor& image);
ImageTensor unflatten(std::span<const float> values, std::size_t height, std::size_t width, std::size_t channels);

inline std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

}  // namespace flim
