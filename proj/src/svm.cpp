#include "flim/svm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "flim/error.hpp"

namespace flim {
namespace {

constexpr double kTau = 1e-12;

double squared_distance(std::span<const float> x, std::span<const float> y) {
  double s = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double d = static_cast<double>(x[j]) - static_cast<double>(y[j]);
    s += d * d;
  }
  return s;
}

std::vector<double> kernel_matrix(std::span<const FeatureVector> points, double gamma) {
  const std::size_t n = points.size();
  std::vector<double> K(n * n);
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < static_cast<long>(n); ++i) {
    const auto a = static_cast<std::size_t>(i);
    K[a * n + a] = 1.0;
    for (std::size_t b = a + 1; b < n; ++b) {
      const double v = std::exp(-gamma * squared_distance(points[a], points[b]));
      K[a * n + b] = v;
      K[b * n + a] = v;
    }
  }
  return K;
}

}  // namespace

double rbf_kernel(std::span<const float> x, std::span<const float> y, double gamma) {
  require(x.size() == y.size(), ErrorCode::Shape,
          "kernel arguments have dimensions " + std::to_string(x.size()) + " and " + std::to_string(y.size()));
  require(gamma > 0.0, ErrorCode::Argument, "RBF gamma must be positive");
  return std::exp(-gamma * squared_distance(x, y));
}

double BinarySvm::decision(std::span<const float> x) const {
  double f = bias;
  for (std::size_t i = 0; i < support_vectors.size(); ++i) f += coefficients[i] * rbf_kernel(support_vectors[i], x, gamma);
  return f;
}

double dual_objective(std::span<const double> kernel, std::size_t n, std::span<const int> labels,
                      std::span<const double> alpha) {
  double linear = 0.0, quad = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    linear += alpha[i];
    if (alpha[i] == 0.0) continue;
    for (std::size_t j = 0; j < n; ++j)
      quad += alpha[i] * alpha[j] * labels[i] * labels[j] * kernel[i * n + j];
  }
  return linear - 0.5 * quad;
}

// Minimizes 1/2 a'Qa - e'a with Q_ij = y_i y_j K_ij, 0 <= a <= C, y'a = 0,
// choosing the working pair by maximal violation and second-order gain.
BinarySvmFit train_binary_kernel(std::span<const double> K, std::size_t n, std::span<const int> y,
                                 const SmoOptions& options) {
  require(n >= 2, ErrorCode::Argument, "SVM training needs at least 2 points");
  require(K.size() == n * n && y.size() == n, ErrorCode::Shape, "kernel/label size mismatch");
  require(options.C > 0.0, ErrorCode::Argument, "C must be positive");
  bool has_pos = false, has_neg = false;
  for (int v : y) {
    require(v == 1 || v == -1, ErrorCode::Argument, "binary labels must be +1 or -1");
    (v > 0 ? has_pos : has_neg) = true;
  }
  require(has_pos && has_neg, ErrorCode::Argument, "SVM training needs both classes");

  const double C = options.C;
  std::vector<double> alpha(n, 0.0), G(n, -1.0);
  auto upper = [&](std::size_t t) { return alpha[t] >= C; };
  auto lower = [&](std::size_t t) { return alpha[t] <= 0.0; };
  auto recompute_gradient = [&] {
    for (std::size_t t = 0; t < n; ++t) {
      double g = -1.0;
      for (std::size_t s = 0; s < n; ++s)
        if (alpha[s] != 0.0) g += y[t] * y[s] * K[t * n + s] * alpha[s];
      G[t] = g;
    }
  };

  const std::size_t budget = std::max<std::size_t>(options.max_passes, 1) * std::max<std::size_t>(1000, 100 * n);
  BinarySvmFit fit;
  std::size_t iter = 0;
  for (; iter < budget; ++iter) {
    double gmax = -std::numeric_limits<double>::infinity();
    double gmax2 = -std::numeric_limits<double>::infinity();
    std::size_t i = n, j = n;
    for (std::size_t t = 0; t < n; ++t) {
      if (y[t] == 1) {
        if (!upper(t) && -G[t] >= gmax) {
          gmax = -G[t];
          i = t;
        }
      } else if (!lower(t) && G[t] >= gmax) {
        gmax = G[t];
        i = t;
      }
    }
    double best_gain = std::numeric_limits<double>::infinity();
    if (i != n) {
      for (std::size_t t = 0; t < n; ++t) {
        const double kit = K[i * n + t];
        if (y[t] == 1) {
          if (lower(t)) continue;
          const double grad_diff = gmax + G[t];
          gmax2 = std::max(gmax2, G[t]);
          if (grad_diff > 0.0) {
            double quad = K[i * n + i] + K[t * n + t] - 2.0 * y[i] * kit;
            if (quad <= 0.0) quad = kTau;
            const double gain = -(grad_diff * grad_diff) / quad;
            if (gain <= best_gain) {
              best_gain = gain;
              j = t;
            }
          }
        } else {
          if (upper(t)) continue;
          const double grad_diff = gmax - G[t];
          gmax2 = std::max(gmax2, -G[t]);
          if (grad_diff > 0.0) {
            double quad = K[i * n + i] + K[t * n + t] + 2.0 * y[i] * kit;
            if (quad <= 0.0) quad = kTau;
            const double gain = -(grad_diff * grad_diff) / quad;
            if (gain <= best_gain) {
              best_gain = gain;
              j = t;
            }
          }
        }
      }
    }
    if (i == n || j == n || gmax + gmax2 < options.tol) {
      // Confirm against a freshly computed gradient before stopping.
      const auto before = G;
      recompute_gradient();
      double drift = 0.0;
      for (std::size_t t = 0; t < n; ++t) drift = std::max(drift, std::abs(before[t] - G[t]));
      if (drift < 1e-12 || i == n || j == n) {
        fit.converged = true;
        break;
      }
      continue;
    }

    const double old_i = alpha[i], old_j = alpha[j];
    const double qij = y[i] * y[j] * K[i * n + j];
    if (y[i] != y[j]) {
      double quad = K[i * n + i] + K[j * n + j] + 2.0 * qij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (-G[i] - G[j]) / quad;
      const double diff = alpha[i] - alpha[j];
      alpha[i] += delta;
      alpha[j] += delta;
      if (diff > 0) {
        if (alpha[j] < 0) {
          alpha[j] = 0;
          alpha[i] = diff;
        }
      } else if (alpha[i] < 0) {
        alpha[i] = 0;
        alpha[j] = -diff;
      }
      if (diff > 0) {
        if (alpha[i] > C) {
          alpha[i] = C;
          alpha[j] = C - diff;
        }
      } else if (alpha[j] > C) {
        alpha[j] = C;
        alpha[i] = C + diff;
      }
    } else {
      double quad = K[i * n + i] + K[j * n + j] - 2.0 * qij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (G[i] - G[j]) / quad;
      const double sum = alpha[i] + alpha[j];
      alpha[i] -= delta;
      alpha[j] += delta;
      if (sum > C) {
        if (alpha[i] > C) {
          alpha[i] = C;
          alpha[j] = sum - C;
        }
      } else if (alpha[j] < 0) {
        alpha[j] = 0;
        alpha[i] = sum;
      }
      if (sum > C) {
        if (alpha[j] > C) {
          alpha[j] = C;
          alpha[i] = sum - C;
        }
      } else if (alpha[i] < 0) {
        alpha[i] = 0;
        alpha[j] = sum;
      }
    }
    const double di = alpha[i] - old_i, dj = alpha[j] - old_j;
    for (std::size_t t = 0; t < n; ++t)
      G[t] += y[t] * (y[i] * K[i * n + t] * di + y[j] * K[j * n + t] * dj);
  }
  if (!fit.converged) recompute_gradient();

  // Bias from free multipliers, or the middle of the feasible interval.
  double ub = std::numeric_limits<double>::infinity(), lb = -std::numeric_limits<double>::infinity();
  double sum_free = 0.0;
  std::size_t free = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const double yg = y[t] * G[t];
    if (upper(t)) {
      if (y[t] == -1) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else if (lower(t)) {
      if (y[t] == 1) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else {
      ++free;
      sum_free += yg;
    }
  }
  const double rho = free > 0 ? sum_free / static_cast<double>(free) : (ub + lb) / 2.0;

  fit.alpha = alpha;
  fit.iterations = iter;
  fit.dual_objective = dual_objective(K, n, y, alpha);
  fit.model.bias = -rho;
  fit.model.C = C;
  fit.model.gamma = options.gamma;
  return fit;
}

BinarySvmFit train_binary(std::span<const FeatureVector> points, std::span<const int> labels, const SmoOptions& options) {
  require(points.size() == labels.size(), ErrorCode::Shape, "one label per point is required");
  require(options.gamma > 0.0, ErrorCode::Argument, "RBF gamma must be positive");
  for (const auto& p : points)
    require(p.size() == points.front().size(), ErrorCode::Shape, "SVM points differ in dimension");
  const auto K = kernel_matrix(points, options.gamma);
  auto fit = train_binary_kernel(K, points.size(), labels, options);
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (fit.alpha[i] <= 0.0) continue;
    fit.model.support_vectors.push_back(points[i]);
    fit.model.coefficients.push_back(fit.alpha[i] * labels[i]);
  }
  return fit;
}

OvOSvmModel train_ovo(std::span<const FeatureVector> features, std::span<const Label> labels, int class_count,
                      const SmoOptions& options) {
  require(class_count >= 2, ErrorCode::Argument, "one-vs-one needs at least 2 classes");
  require(features.size() == labels.size(), ErrorCode::Shape, "one label per feature vector is required");
  require(!features.empty(), ErrorCode::Argument, "no training features");
  require(options.gamma > 0.0, ErrorCode::Argument, "RBF gamma must be positive");
  const std::size_t n = features.size(), dim = features.front().size();
  for (const auto& f : features) require(f.size() == dim, ErrorCode::Shape, "feature vectors differ in dimension");
  for (Label l : labels)
    require(l >= 1 && l <= class_count, ErrorCode::Argument, "label " + std::to_string(l) + " outside 1..c");

  const auto K = kernel_matrix(features, options.gamma);

  struct PairFit {
    Label a, b;
    std::vector<std::size_t> members;
    BinarySvmFit fit;
  };
  std::vector<PairFit> pairs;
  for (Label a = 1; a <= class_count; ++a)
    for (Label b = a + 1; b <= class_count; ++b) {
      PairFit p{a, b, {}, {}};
      bool has_a = false, has_b = false;
      for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] == a) has_a = true;
        if (labels[i] == b) has_b = true;
        if (labels[i] == a || labels[i] == b) p.members.push_back(i);
      }
      if (has_a && has_b) pairs.push_back(std::move(p));
    }
  require(!pairs.empty(), ErrorCode::Argument, "training labels cover fewer than 2 classes");

#pragma omp parallel for schedule(dynamic)
  for (long pi = 0; pi < static_cast<long>(pairs.size()); ++pi) {
    auto& p = pairs[static_cast<std::size_t>(pi)];
    const std::size_t m = p.members.size();
    std::vector<double> sub(m * m);
    std::vector<int> y(m);
    for (std::size_t r = 0; r < m; ++r) {
      y[r] = labels[p.members[r]] == p.a ? 1 : -1;
      for (std::size_t c = 0; c < m; ++c) sub[r * m + c] = K[p.members[r] * n + p.members[c]];
    }
    p.fit = train_binary_kernel(sub, m, y, options);
  }

  OvOSvmModel model;
  model.class_count = class_count;
  model.dimension = dim;
  model.gamma = options.gamma;
  model.C = options.C;
  std::vector<bool> used(n, false);
  for (const auto& p : pairs)
    for (std::size_t r = 0; r < p.members.size(); ++r)
      if (p.fit.alpha[r] > 0.0) used[p.members[r]] = true;
  std::vector<std::uint32_t> pool_index(n, 0);
  for (std::size_t i = 0; i < n; ++i)
    if (used[i]) {
      pool_index[i] = static_cast<std::uint32_t>(model.vectors.size());
      model.vectors.push_back(features[i]);
    }
  for (const auto& p : pairs) {
    PairMachine machine;
    machine.positive = p.a;
    machine.negative = p.b;
    machine.bias = p.fit.model.bias;
    for (std::size_t r = 0; r < p.members.size(); ++r) {
      if (p.fit.alpha[r] <= 0.0) continue;
      const int yr = labels[p.members[r]] == p.a ? 1 : -1;
      machine.support.push_back(pool_index[p.members[r]]);
      machine.coefficients.push_back(p.fit.alpha[r] * yr);
    }
    model.machines.push_back(std::move(machine));
  }
  return model;
}

Label resolve_votes(std::span<const int> votes, std::span<const double> margins) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < votes.size(); ++c) {
    if (votes[c] > votes[best] || (votes[c] == votes[best] && margins[c] > margins[best])) best = c;
  }
  return static_cast<Label>(best + 1);
}

OvOPrediction predict_detailed(const OvOSvmModel& model, std::span<const float> feature) {
  require(feature.size() == model.dimension, ErrorCode::Shape,
          "feature dimension " + std::to_string(feature.size()) + " does not match the SVM's " +
              std::to_string(model.dimension));
  std::vector<double> kv(model.vectors.size());
  for (std::size_t i = 0; i < kv.size(); ++i) kv[i] = std::exp(-model.gamma * squared_distance(model.vectors[i], feature));

  OvOPrediction out;
  out.votes.assign(static_cast<std::size_t>(model.class_count), 0);
  out.margins.assign(static_cast<std::size_t>(model.class_count), 0.0);
  for (const auto& machine : model.machines) {
    double f = machine.bias;
    for (std::size_t s = 0; s < machine.support.size(); ++s) f += machine.coefficients[s] * kv[machine.support[s]];
    const Label winner = f > 0.0 ? machine.positive : machine.negative;
    ++out.votes[static_cast<std::size_t>(winner - 1)];
    out.margins[static_cast<std::size_t>(winner - 1)] += std::abs(f);
  }
  out.label = resolve_votes(out.votes, out.margins);
  return out;
}

Label predict(const OvOSvmModel& model, std::span<const float> feature) { return predict_detailed(model, feature).label; }

}  // namespace flim
