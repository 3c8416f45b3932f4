#include "hfo/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "hfo/common.hpp"
#include "hfo/rng.hpp"

namespace hfo {

double grad_check(const std::function<double()>& f, const std::vector<Tensor*>& params,
                  const std::vector<const Tensor*>& analytic_grads, double delta,
                  std::size_t max_coords, uint64_t seed) {
  if (params.size() != analytic_grads.size()) {
    throw ValidationError("grad_check: param/grad count mismatch");
  }
  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = *params[pi];
    const Tensor& g = *analytic_grads[pi];
    if (!p.same_shape(g)) throw ValidationError("grad_check: shape mismatch");

    std::vector<std::size_t> coords;
    if (p.size() <= max_coords) {
      for (std::size_t j = 0; j < p.size(); ++j) coords.push_back(j);
    } else {
      Rng rng = Rng::stream(seed, "gradcheck", uint64_t(pi));
      for (std::size_t j = 0; j < max_coords; ++j) coords.push_back(rng.below(p.size()));
      std::sort(coords.begin(), coords.end());
      coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    }

    for (std::size_t j : coords) {
      const double saved = p[j];
      p[j] = saved + delta;
      const double up = f();
      p[j] = saved - delta;
      const double down = f();
      p[j] = saved;
      const double fd = (up - down) / (2.0 * delta);
      const double denom = std::max({std::abs(fd), std::abs(g[j]), 1e-4});
      worst = std::max(worst, std::abs(fd - g[j]) / denom);
    }
  }
  return worst;
}

}  // namespace hfo
