#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "flim/tensor.hpp"

namespace flim {

double rbf_kernel(std::span<const float> x, std::span<const float> y, double gamma);

struct SmoOptions {
  double C = 100.0;
  double gamma = 1.0;
  double tol = 1e-3;
  std::size_t max_passes = 10;
};

// Decision function f(x) = sum_i coef_i K(sv_i, x) + bias, coef_i = alpha_i y_i.
struct BinarySvm {
  std::vector<FeatureVector> support_vectors;
  std::vector<double> coefficients;
  double bias = 0.0;
  double gamma = 1.0;
  double C = 100.0;

  double decision(std::span<const float> x) const;
  friend bool operator==(const BinarySvm&, const BinarySvm&) = default;
};

// Full dual solution on the training set, kept for diagnostics and tests.
struct BinarySvmFit {
  BinarySvm model;
  std::vector<double> alpha;  // one per training point
  double dual_objective = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

// labels are +1 / -1. Throws Argument when one class is missing.
BinarySvmFit train_binary(std::span<const FeatureVector> points, std::span<const int> labels, const SmoOptions& options);

// Same, with a precomputed symmetric kernel matrix (row-major n x n).
BinarySvmFit train_binary_kernel(std::span<const double> kernel, std::size_t n, std::span<const int> labels,
                                 const SmoOptions& options);

// Sum alpha - 1/2 sum_ij alpha_i alpha_j y_i y_j K_ij.
double dual_objective(std::span<const double> kernel, std::size_t n, std::span<const int> labels,
                      std::span<const double> alpha);

struct PairMachine {
  Label positive = 0;  // lower class index, decision > 0
  Label negative = 0;
  double bias = 0.0;
  std::vector<std::uint32_t> support;  // indices into OvOSvmModel::vectors
  std::vector<double> coefficients;
  friend bool operator==(const PairMachine&, const PairMachine&) = default;
};

// Support vectors are pooled across machines; each machine references them.
struct OvOSvmModel {
  int class_count = 0;
  std::size_t dimension = 0;
  double gamma = 1.0;
  double C = 100.0;
  std::vector<FeatureVector> vectors;
  std::vector<PairMachine> machines;  // ordered (1,2), (1,3), ..., (c-1,c)

  friend bool operator==(const OvOSvmModel&, const OvOSvmModel&) = default;
};

OvOSvmModel train_ovo(std::span<const FeatureVector> features, std::span<const Label> labels, int class_count,
                      const SmoOptions& options);

struct OvOPrediction {
  Label label = 0;
  std::vector<int> votes;          // index class-1
  std::vector<double> margins;     // summed |decision| of won duels, index class-1
};

OvOPrediction predict_detailed(const OvOSvmModel& model, std::span<const float> feature);
Label predict(const OvOSvmModel& model, std::span<const float> feature);

// Voting rule: most votes; then largest summed margin; then lowest label.
Label resolve_votes(std::span<const int> votes, std::span<const double> margins);

}  // namespace flim
