#include "flim/tensor_ops.hpp"

#include <algorithm>
#include <limits>

#include "flim/error.hpp"

namespace flim {

void FilterBank::add(Filter filter) {
  require(filter.weights.size() == filter_length(), ErrorCode::Shape,
          "filter length " + std::to_string(filter.weights.size()) + " does not match " + std::to_string(k_) + "x" +
              std::to_string(k_) + "x" + std::to_string(channels_));
  filters_.push_back(std::move(filter));
}

namespace {

void check_patch_args(const ImageTensor& image, Pixel center, std::size_t k) {
  require(k % 2 == 1, ErrorCode::Argument, "patch size must be odd, got " + std::to_string(k));
  require(image.contains(center), ErrorCode::Argument,
          "pixel (" + std::to_string(center.row) + "," + std::to_string(center.col) + ") outside the image");
}

}  // namespace

void gather_patch(const ImageTensor& image, Pixel center, std::size_t k, std::span<float> out) {
  const std::size_t m = image.channels();
  const long half = static_cast<long>(k / 2);
  const long h = static_cast<long>(image.height()), w = static_cast<long>(image.width());
  std::size_t o = 0;
  for (long dr = -half; dr <= half; ++dr) {
    const long r = center.row + dr;
    for (long dc = -half; dc <= half; ++dc, o += m) {
      const long c = center.col + dc;
      if (r < 0 || r >= h || c < 0 || c >= w) {
        std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(o), m, 0.0f);
      } else {
        auto px = image.pixel(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
        std::copy(px.begin(), px.end(), out.begin() + static_cast<std::ptrdiff_t>(o));
      }
    }
  }
}

Patch extract_patch(const ImageTensor& image, Pixel center, std::size_t k) {
  check_patch_args(image, center, k);
  Patch patch{k, image.channels(), std::vector<float>(k * k * image.channels())};
  gather_patch(image, center, k, patch.values);
  return patch;
}

ImageTensor convolve(const ImageTensor& image, const FilterBank& bank, std::size_t stride) {
  require(stride >= 1, ErrorCode::Argument, "convolution stride must be >= 1");
  require(image.channels() == bank.channels(), ErrorCode::Shape,
          "image has " + std::to_string(image.channels()) + " channels, filters expect " +
              std::to_string(bank.channels()));
  require(bank.size() >= 1, ErrorCode::Shape, "empty filter bank");
  const std::size_t k = bank.k(), m = image.channels(), nf = bank.size();
  const std::size_t len = k * k * m;
  const std::size_t out_h = ceil_div(image.height(), stride), out_w = ceil_div(image.width(), stride);

  // Transposed weights: element e of every filter is contiguous, so the inner
  // loop is an axpy over filters and each output keeps the (row, col, channel)
  // summation order.
  std::vector<double> weights(len * nf);
  for (std::size_t f = 0; f < nf; ++f)
    for (std::size_t e = 0; e < len; ++e) weights[e * nf + f] = bank[f].weights[e];

  ImageTensor out(out_h, out_w, nf);
  const long half = static_cast<long>(k / 2);
  const long h = static_cast<long>(image.height()), w = static_cast<long>(image.width());

#pragma omp parallel for schedule(static)
  for (long qr = 0; qr < static_cast<long>(out_h); ++qr) {
    std::vector<double> acc(nf);
    const long pr = qr * static_cast<long>(stride);
    for (std::size_t qc = 0; qc < out_w; ++qc) {
      const long pc = static_cast<long>(qc * stride);
      std::fill(acc.begin(), acc.end(), 0.0);
      std::size_t e = 0;
      for (long dr = -half; dr <= half; ++dr) {
        const long r = pr + dr;
        if (r < 0 || r >= h) {
          e += k * m;
          continue;
        }
        for (long dc = -half; dc <= half; ++dc) {
          const long c = pc + dc;
          if (c < 0 || c >= w) {
            e += m;
            continue;
          }
          const float* px = image.pixel(static_cast<std::size_t>(r), static_cast<std::size_t>(c)).data();
          for (std::size_t ch = 0; ch < m; ++ch, ++e) {
            const double v = px[ch];
            if (v == 0.0) continue;
            const double* wrow = weights.data() + e * nf;
            double* a = acc.data();
            for (std::size_t f = 0; f < nf; ++f) a[f] += v * wrow[f];
          }
        }
      }
      auto dst = out.pixel(static_cast<std::size_t>(qr), qc);
      for (std::size_t f = 0; f < nf; ++f) dst[f] = static_cast<float>(acc[f]);
    }
  }
  return out;
}

ImageTensor relu(const ImageTensor& image) {
  ImageTensor out = image;
  relu_inplace(out);
  return out;
}

void relu_inplace(ImageTensor& image) {
  for (float& v : image.data()) v = v > 0.0f ? v : 0.0f;
}

ImageTensor max_pool(const ImageTensor& image, PoolSize pool, std::size_t stride) {
  require(pool.height >= 1 && pool.width >= 1, ErrorCode::Argument, "pool size must be >= 1x1");
  require(stride >= 1, ErrorCode::Argument, "pool stride must be >= 1");
  const std::size_t h = image.height(), w = image.width(), m = image.channels();
  const std::size_t out_h = ceil_div(h, stride), out_w = ceil_div(w, stride);

  auto window = [](std::size_t q, std::size_t stride, std::size_t size, std::size_t limit) {
    const long start = static_cast<long>(q * stride) - static_cast<long>((size - 1) / 2);
    const long lo = std::max<long>(start, 0);
    const long hi = std::min<long>(start + static_cast<long>(size) - 1, static_cast<long>(limit) - 1);
    return std::pair<std::size_t, std::size_t>(static_cast<std::size_t>(lo), static_cast<std::size_t>(hi));
  };

  // Separable: columns first into an h x out_w buffer, then rows.
  ImageTensor horizontal(h, out_w, m);
#pragma omp parallel for schedule(static)
  for (long r = 0; r < static_cast<long>(h); ++r) {
    for (std::size_t qc = 0; qc < out_w; ++qc) {
      const auto [lo, hi] = window(qc, stride, pool.width, w);
      auto dst = horizontal.pixel(static_cast<std::size_t>(r), qc);
      std::fill(dst.begin(), dst.end(), -std::numeric_limits<float>::infinity());
      for (std::size_t c = lo; c <= hi; ++c) {
        auto src = image.pixel(static_cast<std::size_t>(r), c);
        for (std::size_t ch = 0; ch < m; ++ch) dst[ch] = std::max(dst[ch], src[ch]);
      }
    }
  }
  ImageTensor out(out_h, out_w, m);
#pragma omp parallel for schedule(static)
  for (long qr = 0; qr < static_cast<long>(out_h); ++qr) {
    const auto [lo, hi] = window(static_cast<std::size_t>(qr), stride, pool.height, h);
    for (std::size_t qc = 0; qc < out_w; ++qc) {
      auto dst = out.pixel(static_cast<std::size_t>(qr), qc);
      std::fill(dst.begin(), dst.end(), -std::numeric_limits<float>::infinity());
      for (std::size_t r = lo; r <= hi; ++r) {
        auto src = horizontal.pixel(r, qc);
        for (std::size_t ch = 0; ch < m; ++ch) dst[ch] = std::max(dst[ch], src[ch]);
      }
    }
  }
  return out;
}

FeatureVector flatten(const ImageTensor& image) {
  auto data = image.data();
  return FeatureVector(data.begin(), data.end());
}

ImageTensor unflatten(std::span<const float> values, std::size_t height, std::size_t width, std::size_t channels) {
  return ImageTensor(height, width, channels, std::vector<float>(values.begin(), values.end()));
}

}  // namespace flim
