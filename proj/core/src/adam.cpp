#include "hfo/adam.hpp"

#include <cmath>

#include "hfo/common.hpp"

namespace hfo {

Adam::Adam(AdamConfig cfg, std::vector<Tensor*> params)
    : cfg_(cfg), params_(std::move(params)) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (Tensor* p : params_) {
    m_.push_back(Tensor::zeros(p->shape()));
    v_.push_back(Tensor::zeros(p->shape()));
  }
}

void Adam::step(const std::vector<const Tensor*>& grads) {
  if (grads.size() != params_.size()) {
    throw ValidationError("adam: gradient count does not match parameter count");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
  const double decay = 1.0 - cfg_.lr * cfg_.weight_decay;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = *params_[i];
    const Tensor& g = *grads[i];
    if (!p.same_shape(g)) {
      throw ValidationError("adam: gradient shape " + g.shape_str() + " vs parameter " +
                            p.shape_str());
    }
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      p[j] *= decay;
    }
  }
}

}  // namespace hfo
