#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "hfo/common.hpp"
#include "hfo/kmeans.hpp"
#include "hfo/rng.hpp"
#include "hfo/tensor.hpp"

using hfo::ClusterModel;
using hfo::Tensor;

namespace {

std::vector<uint64_t> ids_for(std::size_t n) {
  std::vector<uint64_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = 1000 + i;
  return ids;
}

// two gaussian blobs separated by sep in every coordinate, unit sigma
Tensor blobs(std::size_t per, std::size_t d, double sep, uint64_t seed,
             std::vector<int>* truth) {
  hfo::Rng rng = hfo::Rng::stream(seed, "blobs");
  Tensor pts({2 * per, d});
  for (std::size_t i = 0; i < 2 * per; ++i) {
    const int cls = i < per ? 0 : 1;
    if (truth) truth->push_back(cls);
    for (std::size_t j = 0; j < d; ++j) {
      pts[i * d + j] = (cls == 0 ? 0.0 : sep) + rng.normal();
    }
  }
  return pts;
}

double brute_force_inertia(const Tensor& pts, const ClusterModel& m) {
  const std::size_t n = pts.dim(0), d = pts.dim(1);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double best = INFINITY;
    for (int c = 0; c < m.k(); ++c) {
      double dist = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = pts[i * d + j] - m.centroids[std::size_t(c) * d + j];
        dist += diff * diff;
      }
      best = std::min(best, dist);
    }
    acc += best;
  }
  return acc;
}

}  // namespace

TEST_CASE("recovers two well separated blobs exactly") {
  std::vector<int> truth;
  Tensor pts = blobs(40, 3, 10.0, 1, &truth);
  ClusterModel m = hfo::kmeans(pts, ids_for(80), 2, 10, 300, 1e-6, 5);
  // brute-force oracle: nearest generating center
  int flips = 0;
  for (std::size_t i = 0; i < 80; ++i) {
    flips += (m.assignment[i] != m.assignment[0]) != (truth[i] != truth[0]);
  }
  CHECK(flips == 0);
}

TEST_CASE("all identical points collapse into one cluster") {
  Tensor pts = Tensor::full({6, 2}, 3.0);
  ClusterModel m = hfo::kmeans(pts, ids_for(6), 2, 10, 300, 1e-6, 2);
  for (int a : m.assignment) CHECK(a == m.assignment[0]);
  CHECK(m.inertia == 0.0);
}

TEST_CASE("converged inertia matches a brute force recomputation") {
  std::vector<int> truth;
  Tensor pts = blobs(25, 4, 3.0, 9, &truth);
  ClusterModel m = hfo::kmeans(pts, ids_for(50), 2, 10, 300, 1e-6, 3);
  CHECK(m.inertia == doctest::Approx(brute_force_inertia(pts, m)).epsilon(1e-9));
}

TEST_CASE("more restarts never increase the best inertia") {
  Tensor pts = blobs(30, 2, 2.0, 17, nullptr);
  double prev = INFINITY;
  for (int restarts : {1, 3, 10}) {
    ClusterModel m = hfo::kmeans(pts, ids_for(60), 3, restarts, 300, 1e-6, 4);
    CHECK(m.inertia <= prev + 1e-12);
    prev = m.inertia;
  }
}

TEST_CASE("assignment is invariant to input permutation") {
  std::vector<int> truth;
  Tensor pts = blobs(20, 3, 6.0, 23, &truth);
  auto ids = ids_for(40);
  ClusterModel a = hfo::kmeans(pts, ids, 2, 10, 300, 1e-6, 8);

  // reverse rows and ids together; same point set, same ids
  const std::size_t n = 40, d = 3;
  Tensor rev({n, d});
  std::vector<uint64_t> rev_ids(n);
  for (std::size_t i = 0; i < n; ++i) {
    rev_ids[i] = ids[n - 1 - i];
    for (std::size_t j = 0; j < d; ++j) rev[i * d + j] = pts[(n - 1 - i) * d + j];
  }
  ClusterModel b = hfo::kmeans(rev, rev_ids, 2, 10, 300, 1e-6, 8);
  CHECK(a.inertia == doctest::Approx(b.inertia).epsilon(1e-12));
  for (std::size_t i = 0; i < n; ++i) {
    CHECK(a.assignment[i] == b.assignment[n - 1 - i]);
  }
  for (std::size_t i = 0; i < a.centroids.size(); ++i) {
    CHECK(a.centroids[i] == doctest::Approx(b.centroids[i]).epsilon(1e-12));
  }
}

TEST_CASE("same seed reproduces the model") {
  Tensor pts = blobs(15, 2, 1.5, 29, nullptr);
  ClusterModel a = hfo::kmeans(pts, ids_for(30), 2, 5, 300, 1e-6, 31);
  ClusterModel b = hfo::kmeans(pts, ids_for(30), 2, 5, 300, 1e-6, 31);
  CHECK(a.assignment == b.assignment);
  CHECK(a.inertia == b.inertia);
}

TEST_CASE("nearest maps a point to its centroid") {
  std::vector<int> truth;
  Tensor pts = blobs(10, 2, 8.0, 37, &truth);
  ClusterModel m = hfo::kmeans(pts, ids_for(20), 2, 5, 300, 1e-6, 1);
  for (std::size_t i = 0; i < 20; ++i) {
    CHECK(m.nearest(pts.data() + i * 2) == m.assignment[i]);
  }
}

TEST_CASE("fewer points than k rejected, duplicate ids rejected") {
  Tensor pts = Tensor::zeros({1, 2});
  CHECK_THROWS_AS(hfo::kmeans(pts, ids_for(1), 2, 1, 10, 1e-6, 1), hfo::ValidationError);
  Tensor two = Tensor::zeros({2, 2});
  std::vector<uint64_t> dup = {7, 7};
  CHECK_THROWS_AS(hfo::kmeans(two, dup, 2, 1, 10, 1e-6, 1), hfo::ValidationError);
}

TEST_CASE("k of one averages everything") {
  Tensor pts({3, 1}, {1.0, 2.0, 6.0});
  ClusterModel m = hfo::kmeans(pts, ids_for(3), 1, 3, 100, 1e-9, 2);
  CHECK(m.centroids[0] == doctest::Approx(3.0));
  // inertia = (2^2 + 1^2 + 3^2)
  CHECK(m.inertia == doctest::Approx(14.0));
}
