#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "flim/error.hpp"

namespace flim {

using Label = int;

struct Pixel {
  int row = 0;
  int col = 0;
  friend bool operator==(const Pixel&, const Pixel&) = default;
};

// H x W x C image stored row-major, channel-last: index (r * W + c) * C + ch.
class ImageTensor {
 public:
  ImageTensor() = default;
  ImageTensor(std::size_t height, std::size_t width, std::size_t channels, float fill = 0.0f);
  ImageTensor(std::size_t height, std::size_t width, std::size_t channels, std::vector<float> data);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t channels() const { return channels_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  bool contains(Pixel p) const {
    return p.row >= 0 && p.col >= 0 && static_cast<std::size_t>(p.row) < height_ &&
           static_cast<std::size_t>(p.col) < width_;
  }

  float& at(std::size_t r, std::size_t c, std::size_t ch) { return data_[(r * width_ + c) * channels_ + ch]; }
  float at(std::size_t r, std::size_t c, std::size_t ch) const { return data_[(r * width_ + c) * channels_ + ch]; }

  std::span<float> pixel(std::size_t r, std::size_t c) { return {data_.data() + (r * width_ + c) * channels_, channels_}; }
  std::span<const float> pixel(std::size_t r, std::size_t c) const {
    return {data_.data() + (r * width_ + c) * channels_, channels_};
  }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  std::vector<float>& storage() { return data_; }

  bool all_finite() const;

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  std::vector<float> data_;
};

using FeatureVector = std::vector<float>;

// Dense row-major matrix of float rows; the point container for clustering.
class RowMatrix {
 public:
  RowMatrix() = default;
  RowMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), values_(rows * cols, 0.0f) {}

  static RowMatrix from_rows(std::span<const FeatureVector> rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  std::span<float> row(std::size_t i) { return {values_.data() + i * cols_, cols_}; }
  std::span<const float> row(std::size_t i) const { return {values_.data() + i * cols_, cols_}; }

  void append_row(std::span<const float> values);
  void reserve_rows(std::size_t rows) { values_.reserve(rows * cols_); }

  std::span<const float> values() const { return values_; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> values_;
};

}  // namespace flim
