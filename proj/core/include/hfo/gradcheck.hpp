#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "hfo/tensor.hpp"

namespace hfo {

// Compares analytic gradients against central finite differences of f, which
// must recompute the scalar loss from the params' current contents. Samples
// up to max_coords coordinates per parameter and returns the worst
// |fd - grad| / max(|fd|, |grad|, 1e-4).
double grad_check(const std::function<double()>& f, const std::vector<Tensor*>& params,
                  const std::vector<const Tensor*>& analytic_grads, double delta = 1e-5,
                  std::size_t max_coords = 25, uint64_t seed = 7);

}  // namespace hfo
