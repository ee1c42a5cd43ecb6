#include "flim/kmeans.hpp"

#include <cmath>
#include <limits>

#include "flim/error.hpp"
#include "flim/log.hpp"
#include "flim/rng.hpp"

namespace flim {

double squared_distance(std::span<const float> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double d = static_cast<double>(a[j]) - b[j];
    s += d * d;
  }
  return s;
}

static double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double d = a[j] - b[j];
    s += d * d;
  }
  return s;
}

namespace {

template <class T>
std::size_t nearest_impl(std::span<const T> point, const std::vector<std::vector<double>>& centers) {
  require(!centers.empty(), ErrorCode::Argument, "no centers");
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < centers.size(); ++i) {
    require(centers[i].size() == point.size(), ErrorCode::Shape, "center dimension mismatch");
    const double d = squared_distance(point, std::span<const double>(centers[i]));
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

struct Run {
  std::vector<std::vector<double>> centers;
  std::vector<std::size_t> assignments;
  std::vector<double> distances;
  double inertia = 0.0;
  std::size_t iterations = 0;
  std::vector<double> history;
};

std::vector<double> to_double(std::span<const float> row) { return {row.begin(), row.end()}; }

void seed_plus_plus(const RowMatrix& points, std::size_t k, Rng& rng, Run& run) {
  const std::size_t n = points.rows();
  run.centers.clear();
  run.centers.push_back(to_double(points.row(rng.index(n))));
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = squared_distance(points.row(i), run.centers.back());
  while (run.centers.size() < k) {
    double total = 0.0;
    for (double v : d2) total += v;
    std::size_t pick = n - 1;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (d2[i] > 0.0 && acc > target) {
          pick = i;
          break;
        }
      }
      // Rounding can leave target past the last positive weight.
      while (d2[pick] <= 0.0 && pick > 0) --pick;
    } else {
      pick = rng.index(n);
    }
    run.centers.push_back(to_double(points.row(pick)));
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], squared_distance(points.row(i), run.centers.back()));
  }
}

void assign(const RowMatrix& points, Run& run) {
  const std::size_t n = points.rows();
  run.inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < run.centers.size(); ++c) {
      const double d = squared_distance(points.row(i), run.centers[c]);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    run.assignments[i] = best;
    run.distances[i] = best_d;
    run.inertia += best_d;
  }
}

// Moves the point farthest from its center into each empty cluster.
void repair_empty(const RowMatrix& points, Run& run) {
  const std::size_t k = run.centers.size(), n = points.rows();
  std::vector<std::size_t> sizes(k, 0);
  for (auto a : run.assignments) ++sizes[a];
  for (std::size_t c = 0; c < k; ++c) {
    if (sizes[c] != 0) continue;
    std::size_t far = n;
    double far_d = -1.0;
    for (std::size_t i = 0; i < n; ++i)
      if (sizes[run.assignments[i]] > 1 && run.distances[i] > far_d) {
        far_d = run.distances[i];
        far = i;
      }
    if (far == n) continue;  // cannot happen when k <= n
    --sizes[run.assignments[far]];
    run.assignments[far] = c;
    ++sizes[c];
    run.centers[c] = to_double(points.row(far));
    run.inertia -= run.distances[far];
    run.distances[far] = 0.0;
  }
  run.inertia = 0.0;
  for (double d : run.distances) run.inertia += d;
}

double update_centers(const RowMatrix& points, Run& run) {
  const std::size_t k = run.centers.size(), d = points.cols();
  std::vector<std::vector<double>> sums(k, std::vector<double>(d, 0.0));
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < points.rows(); ++i) {
    auto row = points.row(i);
    auto& s = sums[run.assignments[i]];
    for (std::size_t j = 0; j < d; ++j) s[j] += row[j];
    ++counts[run.assignments[i]];
  }
  double shift = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) continue;
    for (auto& v : sums[c]) v /= static_cast<double>(counts[c]);
    shift = std::max(shift, std::sqrt(squared_distance(std::span<const double>(sums[c]), run.centers[c])));
    run.centers[c] = std::move(sums[c]);
  }
  return shift;
}

void exact_inertia(const RowMatrix& points, Run& run) {
  run.inertia = 0.0;
  for (std::size_t i = 0; i < points.rows(); ++i) {
    run.distances[i] = squared_distance(points.row(i), run.centers[run.assignments[i]]);
    run.inertia += run.distances[i];
  }
}

// Single-point transfers (Hartigan): move a point whenever that lowers the
// total within-cluster sum of squares. A transfer-stable partition is also
// Lloyd-stable, and this escapes many Lloyd fixed points.
void refine_transfers(const RowMatrix& points, Run& run, std::size_t max_sweeps) {
  const std::size_t n = points.rows(), k = run.centers.size();
  if (k < 2) return;
  update_centers(points, run);
  exact_inertia(points, run);
  run.history.push_back(run.inertia);
  std::vector<std::size_t> counts(k, 0);
  for (auto a : run.assignments) ++counts[a];
  for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
    bool moved = false;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t a = run.assignments[i];
      if (counts[a] <= 1) continue;
      const auto x = points.row(i);
      const double na = static_cast<double>(counts[a]);
      const double removal = na / (na - 1.0) * squared_distance(x, run.centers[a]);
      std::size_t target = a;
      double best = removal - 1e-12 * std::max(1.0, removal);
      for (std::size_t b = 0; b < k; ++b) {
        if (b == a) continue;
        const double nb = static_cast<double>(counts[b]);
        const double insertion = nb / (nb + 1.0) * squared_distance(x, run.centers[b]);
        if (insertion < best) {
          best = insertion;
          target = b;
        }
      }
      if (target == a) continue;
      const double nb = static_cast<double>(counts[target]);
      auto& ca = run.centers[a];
      auto& cb = run.centers[target];
      for (std::size_t j = 0; j < x.size(); ++j) {
        ca[j] = (na * ca[j] - x[j]) / (na - 1.0);
        cb[j] = (nb * cb[j] + x[j]) / (nb + 1.0);
      }
      --counts[a];
      ++counts[target];
      run.assignments[i] = target;
      moved = true;
    }
    if (!moved) break;
    update_centers(points, run);
    exact_inertia(points, run);
    run.history.push_back(run.inertia);
  }
}

Run lloyd(const RowMatrix& points, std::size_t k, Rng& rng, const KMeansOptions& options) {
  Run run;
  run.assignments.assign(points.rows(), 0);
  run.distances.assign(points.rows(), 0.0);
  seed_plus_plus(points, k, rng, run);
  assign(points, run);
  repair_empty(points, run);
  run.history.push_back(run.inertia);
  for (std::size_t it = 1; it <= options.max_iters; ++it) {
    const double shift = update_centers(points, run);
    assign(points, run);
    repair_empty(points, run);
    run.history.push_back(run.inertia);
    run.iterations = it;
    if (shift < options.tol) break;
  }
  refine_transfers(points, run, options.max_iters);
  return run;
}

}  // namespace

std::size_t nearest_center(std::span<const float> point, const std::vector<std::vector<double>>& centers) {
  return nearest_impl(point, centers);
}

std::size_t nearest_center(std::span<const double> point, const std::vector<std::vector<double>>& centers) {
  return nearest_impl(point, centers);
}

KMeansResult kmeans(const RowMatrix& points, std::size_t k, std::uint64_t seed, const KMeansOptions& options) {
  require(k >= 1, ErrorCode::Argument, "k-means needs k >= 1");
  require(points.rows() >= 1, ErrorCode::Argument, "k-means needs at least one point");
  KMeansResult result;
  if (k > points.rows()) {
    if (!options.clamp_k)
      fail(ErrorCode::Argument,
           "k = " + std::to_string(k) + " exceeds the number of points (" + std::to_string(points.rows()) + ")");
    result.warning = "k = " + std::to_string(k) + " clamped to " + std::to_string(points.rows()) + " points";
    log_warning(*result.warning);
    k = points.rows();
  }

  const std::size_t restarts = std::max<std::size_t>(options.restarts, 1);
  Run best;
  bool have_best = false;
  for (std::size_t r = 0; r < restarts; ++r) {
    Rng rng(derive_seed(seed, "kmeans", r));
    Run run = lloyd(points, k, rng, options);
    result.restart_histories.push_back(run.history);
    if (!have_best || run.inertia < best.inertia) {
      best = std::move(run);
      have_best = true;
    }
  }
  result.centers = std::move(best.centers);
  result.assignments = std::move(best.assignments);
  result.inertia = best.inertia;
  result.iterations = best.iterations;
  result.inertia_history = std::move(best.history);
  return result;
}

}  // namespace flim
