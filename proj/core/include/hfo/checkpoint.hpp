#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "hfo/tensor.hpp"

namespace hfo {

// On-disk model container. Tensor data is stored float32 little-endian, so
// loading canonicalizes parameters to float precision.
struct Checkpoint {
  int latent_dim = 16;
  int image = 64;
  std::vector<int> channels = {16, 32, 64, 128};
  double beta = 1.0;
  double beta_lr = 1e-4;
  long epoch = 0;
  uint64_t seed = 0;
  uint64_t fx_seed = 0;
  std::string fx_kind = "random";
  std::map<std::string, Tensor> tensors;
  // extra tensor tables keyed by section tag ("classifier")
  std::map<std::string, std::map<std::string, Tensor>> sections;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// FNV-1a over the float32 image of the main tensor table; detects any drift
// in frozen parameters.
uint64_t param_hash(const Checkpoint& ck);

}  // namespace hfo
