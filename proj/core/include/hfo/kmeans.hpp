#pragma once

#include <cstdint>
#include <vector>

#include "hfo/tensor.hpp"

namespace hfo {

struct ClusterModel {
  Tensor centroids;             // (k, d)
  std::vector<int> assignment;  // per input row, nearest centroid (ties -> lowest index)
  double inertia = 0.0;

  int k() const { return int(centroids.dim(0)); }
  int nearest(const double* point) const;
};

// Lloyd's algorithm, k-means++ seeding, best of n_restarts by inertia.
// ids key every random draw, so permuting rows (with their ids) permutes
// the assignment vector but never changes any point's cluster membership.
// A cluster that empties is re-seeded to the point farthest from its
// current centroid; with fewer than k distinct points this leaves empty
// clusters and duplicate centroids rather than failing.
ClusterModel kmeans(const Tensor& points, const std::vector<uint64_t>& ids, int k = 2,
                    int n_restarts = 10, int max_iter = 300, double tol = 1e-6, uint64_t seed = 0);

}  // namespace hfo
