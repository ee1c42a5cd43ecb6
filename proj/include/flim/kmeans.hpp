#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flim/tensor.hpp"

namespace flim {

struct KMeansOptions {
  std::size_t max_iters = 100;
  double tol = 1e-4;  // max center displacement
  std::size_t restarts = 5;
  // Clamp k to the number of points (with a warning) instead of failing.
  bool clamp_k = false;
};

struct KMeansResult {
  std::vector<std::vector<double>> centers;
  std::vector<std::size_t> assignments;
  double inertia = 0.0;
  std::size_t iterations = 0;
  // Inertia after every assignment step and transfer sweep of the winning restart.
  std::vector<double> inertia_history;
  // Every restart's history, for monotonicity checks.
  std::vector<std::vector<double>> restart_histories;
  std::optional<std::string> warning;
};

// Lloyd's algorithm with k-means++ seeding, polished by single-point
// transfers; best inertia over restarts wins.
// Empty clusters take the point farthest from its current center.
KMeansResult kmeans(const RowMatrix& points, std::size_t k, std::uint64_t seed, const KMeansOptions& options = {});

// Lowest index wins ties.
std::size_t nearest_center(std::span<const float> point, const std::vector<std::vector<double>>& centers);
std::size_t nearest_center(std::span<const double> point, const std::vector<std::vector<double>>& centers);

double squared_distance(std::span<const float> a, std::span<const double> b);

}  // namespace flim
