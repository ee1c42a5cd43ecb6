#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

namespace oracle {

double Grid::padded(long r, long col, std::size_t ch) const {
  if (r < 0 || col < 0 || r >= static_cast<long>(h) || col >= static_cast<long>(w)) return 0.0;
  return (*this)(static_cast<std::size_t>(r), static_cast<std::size_t>(col), ch);
}

Grid from_tensor(const flim::ImageTensor& t) {
  Grid g(t.height(), t.width(), t.channels());
  for (std::size_t r = 0; r < g.h; ++r)
    for (std::size_t c = 0; c < g.w; ++c)
      for (std::size_t ch = 0; ch < g.c; ++ch) g(r, c, ch) = t.at(r, c, ch);
  return g;
}

std::vector<double> patch(const Grid& image, long row, long col, std::size_t k) {
  const long half = static_cast<long>(k / 2);
  std::vector<double> out;
  for (long dr = -half; dr <= half; ++dr)
    for (long dc = -half; dc <= half; ++dc)
      for (std::size_t ch = 0; ch < image.c; ++ch) out.push_back(image.padded(row + dr, col + dc, ch));
  return out;
}

Grid cross_correlate(const Grid& image, const std::vector<std::vector<double>>& filters, std::size_t k,
                     std::size_t stride) {
  const std::size_t oh = (image.h + stride - 1) / stride, ow = (image.w + stride - 1) / stride;
  Grid out(oh, ow, filters.size());
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j) {
      const auto p = patch(image, static_cast<long>(i * stride), static_cast<long>(j * stride), k);
      for (std::size_t f = 0; f < filters.size(); ++f) {
        double s = 0.0;
        for (std::size_t t = 0; t < p.size(); ++t) s += filters[f][t] * p[t];
        out(i, j, f) = s;
      }
    }
  return out;
}

Grid max_pool(const Grid& image, std::size_t ph, std::size_t pw, std::size_t stride) {
  const std::size_t oh = (image.h + stride - 1) / stride, ow = (image.w + stride - 1) / stride;
  Grid out(oh, ow, image.c);
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j)
      for (std::size_t ch = 0; ch < image.c; ++ch) {
        double best = -std::numeric_limits<double>::infinity();
        const long r0 = static_cast<long>(i * stride) - static_cast<long>((ph - 1) / 2);
        const long c0 = static_cast<long>(j * stride) - static_cast<long>((pw - 1) / 2);
        for (long r = r0; r < r0 + static_cast<long>(ph); ++r)
          for (long c = c0; c < c0 + static_cast<long>(pw); ++c)
            if (r >= 0 && c >= 0 && r < static_cast<long>(image.h) && c < static_cast<long>(image.w))
              best = std::max(best, image(static_cast<std::size_t>(r), static_cast<std::size_t>(c), ch));
        out(i, j, ch) = best;
      }
  return out;
}

std::vector<double> flatten(const Grid& image) {
  std::vector<double> out;
  for (std::size_t r = 0; r < image.h; ++r)
    for (std::size_t c = 0; c < image.w; ++c)
      for (std::size_t ch = 0; ch < image.c; ++ch) out.push_back(image(r, c, ch));
  return out;
}

Grid bilinear(const Grid& image, std::size_t out_h, std::size_t out_w) {
  auto source = [](std::size_t i, std::size_t in, std::size_t out) {
    const double s = (static_cast<double>(i) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(in - 1));
  };
  auto tent = [](double d) { return std::max(0.0, 1.0 - std::abs(d)); };
  Grid out(out_h, out_w, image.c);
  for (std::size_t i = 0; i < out_h; ++i)
    for (std::size_t j = 0; j < out_w; ++j) {
      const double sy = source(i, image.h, out_h), sx = source(j, image.w, out_w);
      for (std::size_t ch = 0; ch < image.c; ++ch) {
        double s = 0.0;
        for (std::size_t r = 0; r < image.h; ++r)
          for (std::size_t c = 0; c < image.w; ++c)
            s += image(r, c, ch) * tent(sy - static_cast<double>(r)) * tent(sx - static_cast<double>(c));
        out(i, j, ch) = s;
      }
    }
  return out;
}

double exhaustive_kmeans(const std::vector<std::vector<double>>& points, std::size_t k) {
  const std::size_t n = points.size(), d = points.empty() ? 0 : points[0].size();
  std::vector<std::size_t> block(n, 0);
  double best = std::numeric_limits<double>::infinity();

  auto cost = [&] {
    double total = 0.0;
    for (std::size_t b = 0; b < k; ++b) {
      std::vector<double> mean(d, 0.0);
      std::size_t count = 0;
      for (std::size_t i = 0; i < n; ++i)
        if (block[i] == b) {
          ++count;
          for (std::size_t t = 0; t < d; ++t) mean[t] += points[i][t];
        }
      for (auto& m : mean) m /= static_cast<double>(count);
      for (std::size_t i = 0; i < n; ++i)
        if (block[i] == b)
          for (std::size_t t = 0; t < d; ++t) total += (points[i][t] - mean[t]) * (points[i][t] - mean[t]);
    }
    return total;
  };

  // Restricted growth strings: block[i] <= 1 + max(block[0..i-1]).
  std::function<void(std::size_t, std::size_t)> visit = [&](std::size_t i, std::size_t used) {
    if (used + (n - i) < k) return;
    if (i == n) {
      if (used == k) best = std::min(best, cost());
      return;
    }
    for (std::size_t b = 0; b <= std::min(used, k - 1); ++b) {
      block[i] = b;
      visit(i + 1, std::max(used, b + 1));
    }
  };
  if (n > 0) {
    block[0] = 0;
    visit(1, 1);
  }
  return best;
}

double rbf(const std::vector<double>& a, const std::vector<double>& b, double gamma) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::exp(-gamma * s);
}

namespace {

std::vector<double> project(const std::vector<double>& z, const std::vector<int>& y, double C) {
  const std::size_t n = z.size();
  auto at = [&](double nu) {
    std::vector<double> a(n);
    for (std::size_t i = 0; i < n; ++i) a[i] = std::clamp(z[i] - nu * y[i], 0.0, C);
    return a;
  };
  auto balance = [&](double nu) {
    double s = 0.0;
    const auto a = at(nu);
    for (std::size_t i = 0; i < n; ++i) s += y[i] * a[i];
    return s;
  };
  double bound = C;
  for (double v : z) bound = std::max(bound, std::abs(v) + C);
  double lo = -bound, hi = bound;  // balance(lo) >= 0 >= balance(hi)
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (balance(mid) > 0.0) lo = mid;
    else hi = mid;
  }
  return at(0.5 * (lo + hi));
}

double objective(const std::vector<double>& Q, const std::vector<double>& a) {
  const std::size_t n = a.size();
  double lin = 0.0, quad = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    lin += a[i];
    for (std::size_t j = 0; j < n; ++j) quad += a[i] * a[j] * Q[i * n + j];
  }
  return lin - 0.5 * quad;
}

}  // namespace

DualSolution svm_dual(const std::vector<double>& kernel, std::size_t n, const std::vector<int>& labels, double C,
                      std::size_t iterations) {
  std::vector<double> Q(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) Q[i * n + j] = labels[i] * labels[j] * kernel[i * n + j];

  // Largest eigenvalue by power iteration gives the step size.
  std::vector<double> v(n, 1.0), w(n);
  double lambda = 1.0;
  for (int it = 0; it < 500; ++it) {
    double norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      w[i] = 0.0;
      for (std::size_t j = 0; j < n; ++j) w[i] += Q[i * n + j] * v[j];
      norm += w[i] * w[i];
    }
    norm = std::sqrt(norm);
    if (norm == 0.0) break;
    lambda = norm;
    for (std::size_t i = 0; i < n; ++i) v[i] = w[i] / norm;
  }
  const double step = 1.0 / (1.05 * lambda);

  std::vector<double> a(n, 0.0), prev = a, yk = a;
  double t = 1.0, best_obj = 0.0;
  std::vector<double> best = a;
  for (std::size_t it = 0; it < iterations; ++it) {
    std::vector<double> z(n);
    for (std::size_t i = 0; i < n; ++i) {
      double g = 1.0;
      for (std::size_t j = 0; j < n; ++j) g -= Q[i * n + j] * yk[j];
      z[i] = yk[i] + step * g;
    }
    a = project(z, labels, C);
    const double obj = objective(Q, a);
    if (obj > best_obj) {
      best_obj = obj;
      best = a;
    }
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    if (obj < objective(Q, prev)) {
      t = 1.0;  // adaptive restart
      yk = a;
    } else {
      for (std::size_t i = 0; i < n; ++i) yk[i] = a[i] + ((t - 1.0) / t_next) * (a[i] - prev[i]);
      t = t_next;
    }
    prev = a;
  }
  return {best, best_obj};
}

}  // namespace oracle
