#include "hfo/latent.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

#include "hfo/common.hpp"
#include "hfo/csvio.hpp"

namespace hfo {

double percentile(const std::vector<double>& values, double q) {
  if (values.empty()) throw ValidationError("percentile of empty sequence");
  if (!(q >= 0.0 && q <= 1.0)) throw ValidationError("percentile q outside [0,1]");
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  const double pos = q * double(sorted.size() - 1);
  const std::size_t lo = std::size_t(pos);
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = pos - double(lo);
  return sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac;
}

std::vector<Tensor> interpolate_dimension(const SweepSpec& spec, const Tensor& codes,
                                          const Vae& vae) {
  if (codes.rank() != 2) throw ValidationError("latent codes must be (n, d)");
  const std::size_t d = codes.dim(1);
  if (spec.seed_code.size() != d) throw ValidationError("seed code dimension mismatch");
  if (spec.dim < 0 || std::size_t(spec.dim) >= d) throw ValidationError("sweep dim out of range");
  if (spec.steps < 2) throw ValidationError("sweep needs at least two steps");
  if (!(spec.lo_q < spec.hi_q)) throw ValidationError("sweep quantiles must satisfy lo < hi");

  std::vector<double> column(codes.dim(0));
  for (std::size_t i = 0; i < column.size(); ++i) column[i] = codes[i * d + std::size_t(spec.dim)];
  const double lo = percentile(column, spec.lo_q);
  const double hi = percentile(column, spec.hi_q);

  std::vector<Tensor> images;
  images.reserve(std::size_t(spec.steps));
  for (int s = 0; s < spec.steps; ++s) {
    const double t = double(s) / double(spec.steps - 1);
    Tensor z({1, d});
    for (std::size_t j = 0; j < d; ++j) z[j] = spec.seed_code[j];
    z[std::size_t(spec.dim)] = lo + (hi - lo) * t;
    Tensor out = vae.decode_batch(z);
    images.push_back(out.reshaped({out.dim(2), out.dim(3)}));
  }
  return images;
}

Tensor knockout(const Tensor& codes, int dim) {
  if (codes.rank() != 2) throw ValidationError("latent codes must be (n, d)");
  if (dim < 0 || std::size_t(dim) >= codes.dim(1)) throw ValidationError("knockout dim out of range");
  Tensor out = codes;
  const std::size_t d = codes.dim(1);
  for (std::size_t i = 0; i < codes.dim(0); ++i) out[i * d + std::size_t(dim)] = 0.0;
  return out;
}

namespace {

// Cyclic Jacobi on a symmetric matrix; returns eigenvalues with the
// rotation product in vectors (columns are eigenvectors).
void jacobi_eigen(std::vector<double>& a, std::size_t d, std::vector<double>& eigenvalues,
                  std::vector<double>& vectors) {
  vectors.assign(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) vectors[i * d + i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < d; ++p) {
      for (std::size_t q = p + 1; q < d; ++q) off += a[p * d + q] * a[p * d + q];
    }
    if (off < 1e-24) break;
    for (std::size_t p = 0; p < d; ++p) {
      for (std::size_t q = p + 1; q < d; ++q) {
        const double apq = a[p * d + q];
        if (std::abs(apq) < 1e-18) continue;
        const double app = a[p * d + p], aqq = a[q * d + q];
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t i = 0; i < d; ++i) {
          const double aip = a[i * d + p], aiq = a[i * d + q];
          a[i * d + p] = c * aip - s * aiq;
          a[i * d + q] = s * aip + c * aiq;
        }
        for (std::size_t i = 0; i < d; ++i) {
          const double api = a[p * d + i], aqi = a[q * d + i];
          a[p * d + i] = c * api - s * aqi;
          a[q * d + i] = s * api + c * aqi;
        }
        for (std::size_t i = 0; i < d; ++i) {
          const double vip = vectors[i * d + p], viq = vectors[i * d + q];
          vectors[i * d + p] = c * vip - s * viq;
          vectors[i * d + q] = s * vip + c * viq;
        }
      }
    }
  }
  eigenvalues.resize(d);
  for (std::size_t i = 0; i < d; ++i) eigenvalues[i] = a[i * d + i];
}

}  // namespace

Pca2 pca2(const Tensor& points) {
  if (points.rank() != 2) throw ValidationError("pca expects (n, d) points");
  const std::size_t n = points.dim(0), d = points.dim(1);
  if (n < 3) throw ValidationError("pca needs at least 3 points");
  if (d < 2) throw ValidationError("pca needs dimension at least 2");

  Pca2 out;
  out.mean.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) out.mean[j] += points[i * d + j];
  }
  for (std::size_t j = 0; j < d; ++j) out.mean[j] /= double(n);

  std::vector<double> cov(d * d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double cj = points[i * d + j] - out.mean[j];
      for (std::size_t l = j; l < d; ++l) {
        cov[j * d + l] += cj * (points[i * d + l] - out.mean[l]);
      }
    }
  }
  double total = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t l = j; l < d; ++l) {
      cov[j * d + l] /= double(n);
      cov[l * d + j] = cov[j * d + l];
    }
    total += cov[j * d + j];
  }
  if (total <= 0.0) throw ValidationError("pca on identical points");

  std::vector<double> eigenvalues, vectors;
  jacobi_eigen(cov, d, eigenvalues, vectors);
  std::vector<std::size_t> order(d);
  for (std::size_t i = 0; i < d; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (eigenvalues[a] != eigenvalues[b]) return eigenvalues[a] > eigenvalues[b];
    return a < b;
  });

  out.components = Tensor({2, d});
  for (int c = 0; c < 2; ++c) {
    const std::size_t col = order[std::size_t(c)];
    std::size_t arg = 0;
    double best = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double v = std::abs(vectors[j * d + col]);
      if (v > best) {
        best = v;
        arg = j;
      }
    }
    const double sign = vectors[arg * d + col] < 0.0 ? -1.0 : 1.0;
    for (std::size_t j = 0; j < d; ++j) {
      out.components[std::size_t(c) * d + j] = sign * vectors[j * d + col];
    }
    out.explained[c] = std::max(0.0, eigenvalues[col]) / total;
  }

  out.projected = Tensor({n, 2});
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < 2; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        acc += (points[i * d + j] - out.mean[j]) * out.components[std::size_t(c) * d + j];
      }
      out.projected[i * 2 + std::size_t(c)] = acc;
    }
  }
  return out;
}

double knn_mixing(const Tensor& projected, const std::vector<int>& labels, int k) {
  if (projected.rank() != 2 || projected.dim(1) != 2) {
    throw ValidationError("mixing expects (n, 2) projections");
  }
  const std::size_t n = projected.dim(0);
  if (labels.size() != n) throw ValidationError("mixing labels must align");
  if (n < 2 || k < 1) return 0.0;
  const std::size_t kk = std::min(std::size_t(k), n - 1);
  std::size_t differing = 0;
  std::vector<std::pair<double, std::size_t>> dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double dx = projected[i * 2] - projected[j * 2];
      const double dy = projected[i * 2 + 1] - projected[j * 2 + 1];
      dist[j] = {dx * dx + dy * dy, j};
    }
    dist[i].first = std::numeric_limits<double>::infinity();  // exclude self
    std::partial_sort(dist.begin(), dist.begin() + long(kk), dist.end());
    for (std::size_t r = 0; r < kk; ++r) {
      if (labels[dist[r].second] != labels[i]) ++differing;
    }
  }
  return double(differing) / double(n * kk);
}

void write_pgm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 2) throw ValidationError("pgm writer expects (H, W)");
  std::string bytes = "P5\n" + std::to_string(image.dim(1)) + " " + std::to_string(image.dim(0)) +
                      "\n255\n";
  bytes.reserve(bytes.size() + image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double v = std::clamp(image[i], 0.0, 1.0);
    bytes.push_back(char(uint8_t(std::lround(v * 255.0))));
  }
  write_file_atomic(path, bytes);
}

void render_sweeps(const std::filesystem::path& dir, const Vae& vae, const Tensor& codes,
                   const std::vector<double>& seed_code, int steps, double lo_q, double hi_q) {
  std::filesystem::create_directories(dir / "sweeps");
  const std::size_t d = codes.dim(1);
  for (std::size_t dim = 0; dim < d; ++dim) {
    SweepSpec spec;
    spec.seed_code = seed_code;
    spec.dim = int(dim);
    spec.steps = steps;
    spec.lo_q = lo_q;
    spec.hi_q = hi_q;
    std::vector<Tensor> tiles = interpolate_dimension(spec, codes, vae);
    const std::size_t h = tiles[0].dim(0), w = tiles[0].dim(1);
    Tensor strip({h, w * tiles.size()});
    for (std::size_t t = 0; t < tiles.size(); ++t) {
      for (std::size_t r = 0; r < h; ++r) {
        std::copy(tiles[t].data() + r * w, tiles[t].data() + (r + 1) * w,
                  strip.data() + r * w * tiles.size() + t * w);
      }
    }
    write_pgm(dir / "sweeps" / ("dim_" + std::to_string(dim) + ".pgm"), strip);
  }
}

std::vector<double> render_knockouts(const std::filesystem::path& dir, const Tensor& codes,
                                     const std::vector<std::string>& event_ids,
                                     const std::vector<double>& probabilities,
                                     const std::vector<int>& labels, int k) {
  const std::size_t n = codes.dim(0), d = codes.dim(1);
  if (event_ids.size() != n || probabilities.size() != n || labels.size() != n) {
    throw ValidationError("knockout inputs must align");
  }
  std::filesystem::create_directories(dir / "knockout");
  std::vector<double> mixing;
  mixing.reserve(d);
  for (std::size_t dim = 0; dim < d; ++dim) {
    Pca2 p = pca2(knockout(codes, int(dim)));
    CsvTable table;
    table.header = {"event_id", "pc1", "pc2", "probability", "label"};
    for (std::size_t i = 0; i < n; ++i) {
      table.rows.push_back({event_ids[i], format_double(p.projected[i * 2]),
                            format_double(p.projected[i * 2 + 1]),
                            format_double(probabilities[i]), std::to_string(labels[i])});
    }
    write_csv(dir / "knockout" / ("dim_" + std::to_string(dim) + ".csv"), table);
    mixing.push_back(knn_mixing(p.projected, labels, k));
  }
  CsvTable summary;
  summary.header = {"dimension", "mixing"};
  for (std::size_t dim = 0; dim < d; ++dim) {
    summary.rows.push_back({std::to_string(dim), format_double(mixing[dim])});
  }
  write_csv(dir / "knockout" / "summary.csv", summary);
  return mixing;
}

}  // namespace hfo
