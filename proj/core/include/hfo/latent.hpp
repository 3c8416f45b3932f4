#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "hfo/tensor.hpp"
#include "hfo/vae.hpp"

namespace hfo {

// Linear-interpolation percentile on sorted values, q in [0,1].
double percentile(const std::vector<double>& values, double q);

struct SweepSpec {
  std::vector<double> seed_code;  // typically the mean latent of predicted-pathological events
  int dim = 0;
  int steps = 8;
  double lo_q = 0.001;
  double hi_q = 0.999;
};

// Decode the seed with one coordinate swept between the per-dimension
// percentiles of codes. Returns steps images (H,W).
std::vector<Tensor> interpolate_dimension(const SweepSpec& spec, const Tensor& codes,
                                          const Vae& vae);

// Copies of codes with the given coordinate zeroed.
Tensor knockout(const Tensor& codes, int dim);

struct Pca2 {
  std::vector<double> mean;  // (d)
  Tensor components;         // (2, d), rows are unit eigenvectors
  Tensor projected;          // (n, 2), mean-centered projections
  double explained[2] = {0.0, 0.0};  // fraction of total variance
};

// Top-2 PCA via Jacobi eigendecomposition of the covariance; the
// largest-magnitude entry of each component is made positive.
Pca2 pca2(const Tensor& points);

// Fraction of (point, neighbor) pairs among k nearest neighbors whose
// labels differ; the quantitative mixing proxy.
double knn_mixing(const Tensor& projected, const std::vector<int>& labels, int k = 10);

// Greyscale P5 writer for plain [0,1] matrices and tile rows.
void write_pgm(const std::filesystem::path& path, const Tensor& image);

// sweeps/dim_<i>.pgm, one horizontal strip of steps tiles per dimension.
void render_sweeps(const std::filesystem::path& dir, const Vae& vae, const Tensor& codes,
                   const std::vector<double>& seed_code, int steps, double lo_q, double hi_q);

// knockout/dim_<i>.csv (event_id,pc1,pc2,probability,label) plus
// knockout/summary.csv (dimension,mixing). Returns per-dimension mixing.
std::vector<double> render_knockouts(const std::filesystem::path& dir, const Tensor& codes,
                                     const std::vector<std::string>& event_ids,
                                     const std::vector<double>& probabilities,
                                     const std::vector<int>& labels, int k = 10);

}  // namespace hfo
