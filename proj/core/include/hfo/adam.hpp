#pragma once

#include <vector>

#include "hfo/tensor.hpp"

namespace hfo {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled, applied after the adaptive update
};

class Adam {
 public:
  Adam(AdamConfig cfg, std::vector<Tensor*> params);

  // grads aligned with the params passed at construction.
  void step(const std::vector<const Tensor*>& grads);

  long step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<Tensor*> params_;
  std::vector<Tensor> m_, v_;
};

}  // namespace hfo
