#include "hfo/kmeans.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "hfo/common.hpp"
#include "hfo/rng.hpp"

namespace hfo {

namespace {

double sq_dist(const double* a, const double* b, std::size_t d) {
  double acc = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double diff = a[i] - b[i];
    acc += diff * diff;
  }
  return acc;
}

struct Fit {
  Tensor centroids;
  std::vector<int> assignment;
  double inertia = 0.0;
};

// d2[i] = squared distance from point i to its nearest centroid.
void nearest_all(const Tensor& points, const Tensor& centroids, std::vector<int>& assign,
                 std::vector<double>& d2) {
  const std::size_t n = points.dim(0), d = points.dim(1), k = centroids.dim(0);
  const int threads = num_threads();
#pragma omp parallel for schedule(static) num_threads(threads) if (threads > 1 && n > 256)
  for (long li = 0; li < long(n); ++li) {
    const std::size_t i = std::size_t(li);
    const double* p = points.data() + i * d;
    int best = 0;
    double best_d = sq_dist(p, centroids.data(), d);
    for (std::size_t c = 1; c < k; ++c) {
      const double dist = sq_dist(p, centroids.data() + c * d, d);
      if (dist < best_d) {
        best_d = dist;
        best = int(c);
      }
    }
    assign[i] = best;
    d2[i] = best_d;
  }
}

// k-means++: every draw is an exponential race keyed by point id, so the
// winner does not depend on row order.
Tensor seed_centroids(const Tensor& points, const std::vector<uint64_t>& ids,
                      const std::vector<std::size_t>& order, int k, uint64_t seed, int restart) {
  const std::size_t n = points.dim(0), d = points.dim(1);
  Tensor centroids({std::size_t(k), d});
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::vector<bool> taken(n, false);
  for (int c = 0; c < k; ++c) {
    std::size_t winner = n;
    double best_key = std::numeric_limits<double>::infinity();
    for (std::size_t i : order) {
      if (taken[i]) continue;
      const double w = (c == 0) ? 1.0 : d2[i];
      if (w <= 0.0) continue;
      const double u = Rng::stream(seed, "kpp", uint64_t(restart), uint64_t(c), ids[i]).uniform();
      const double key = -std::log(u) / w;
      if (key < best_key) {
        best_key = key;
        winner = i;
      }
    }
    if (winner == n) {
      // No remaining point at positive distance: duplicate the first free
      // point (degenerate input), or the overall first point.
      for (std::size_t i : order) {
        if (!taken[i]) {
          winner = i;
          break;
        }
      }
      if (winner == n) winner = order[0];
    }
    taken[winner] = true;
    std::copy(points.data() + winner * d, points.data() + (winner + 1) * d,
              centroids.data() + std::size_t(c) * d);
    if (c + 1 < k) {
      for (std::size_t i : order) {
        const double dist = sq_dist(points.data() + i * d, centroids.data() + std::size_t(c) * d, d);
        d2[i] = std::min(d2[i], dist);
      }
    }
  }
  return centroids;
}

Fit lloyd(const Tensor& points, const std::vector<std::size_t>& order, Tensor centroids,
          int max_iter, double tol) {
  const std::size_t n = points.dim(0), d = points.dim(1), k = centroids.dim(0);
  std::vector<int> assign(n, 0);
  std::vector<double> d2(n, 0.0);
  for (int iter = 0; iter < max_iter; ++iter) {
    nearest_all(points, centroids, assign, d2);

    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i : order) ++counts[std::size_t(assign[i])];
    std::vector<bool> reseeded_point(n, false);
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      // Empty cluster: move its centroid onto the farthest point.
      std::size_t far = order[0];
      double far_d = -1.0;
      for (std::size_t i : order) {
        if (!reseeded_point[i] && d2[i] > far_d) {
          far_d = d2[i];
          far = i;
        }
      }
      reseeded_point[far] = true;
      std::copy(points.data() + far * d, points.data() + (far + 1) * d,
                centroids.data() + c * d);
    }

    Tensor next = Tensor::zeros({k, d});
    std::vector<std::size_t> next_counts(k, 0);
    for (std::size_t i : order) {
      const std::size_t c = std::size_t(assign[i]);
      ++next_counts[c];
      const double* p = points.data() + i * d;
      double* dst = next.data() + c * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += p[j];
    }
    double shift = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      if (next_counts[c] == 0) {
        std::copy(centroids.data() + c * d, centroids.data() + (c + 1) * d, next.data() + c * d);
        continue;
      }
      const double inv = 1.0 / double(next_counts[c]);
      for (std::size_t j = 0; j < d; ++j) next[c * d + j] *= inv;
      shift = std::max(shift, std::sqrt(sq_dist(next.data() + c * d, centroids.data() + c * d, d)));
    }
    centroids = std::move(next);
    if (shift < tol) break;
  }
  nearest_all(points, centroids, assign, d2);
  Fit fit;
  fit.centroids = std::move(centroids);
  fit.assignment = std::move(assign);
  for (std::size_t i : order) fit.inertia += d2[i];
  return fit;
}

}  // namespace

int ClusterModel::nearest(const double* point) const {
  const std::size_t d = centroids.dim(1);
  int best = 0;
  double best_d = sq_dist(point, centroids.data(), d);
  for (std::size_t c = 1; c < centroids.dim(0); ++c) {
    const double dist = sq_dist(point, centroids.data() + c * d, d);
    if (dist < best_d) {
      best_d = dist;
      best = int(c);
    }
  }
  return best;
}

ClusterModel kmeans(const Tensor& points, const std::vector<uint64_t>& ids, int k, int n_restarts,
                    int max_iter, double tol, uint64_t seed) {
  if (points.rank() != 2) throw ValidationError("kmeans expects (n, d) points");
  const std::size_t n = points.dim(0);
  if (k < 1 || n < std::size_t(k)) throw ValidationError("kmeans needs at least k points");
  if (ids.size() != n) throw ValidationError("kmeans ids must align with points");
  if (std::set<uint64_t>(ids.begin(), ids.end()).size() != n) {
    throw ValidationError("kmeans ids must be unique");
  }
  if (n_restarts < 1 || max_iter < 1 || tol < 0.0) throw ValidationError("bad kmeans parameters");

  // Canonical processing order: ascending id. All reductions walk this
  // order, so results are invariant to input permutation.
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });

  Fit best;
  bool have = false;
  for (int r = 0; r < n_restarts; ++r) {
    Fit fit = lloyd(points, order, seed_centroids(points, ids, order, k, seed, r), max_iter, tol);
    if (!have || fit.inertia < best.inertia) {
      best = std::move(fit);
      have = true;
    }
  }
  ClusterModel model;
  model.centroids = std::move(best.centroids);
  model.assignment = std::move(best.assignment);
  model.inertia = best.inertia;
  return model;
}

}  // namespace hfo
