#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "hfo/checkpoint.hpp"
#include "hfo/graph.hpp"
#include "hfo/rng.hpp"
#include "hfo/types.hpp"

namespace hfo {

// Events paired with their transform images, grouped by subject.
struct EventImageSet {
  std::vector<HfoEvent> events;
  std::vector<Tensor> images;  // aligned with events, each (H, W) in [0,1]
  std::map<std::string, std::vector<std::size_t>> by_subject;

  std::size_t size() const { return events.size(); }
  // (B,1,H,W) batch from the given indices.
  Tensor batch(const std::vector<std::size_t>& idx) const;
};

struct VaeConfig {
  int latent_dim = 16;
  int image = 64;
  std::vector<int> channels = {16, 32, 64, 128};  // encoder stages, halving each
  double lr = 1e-3;
  double weight_decay = 1e-5;
  double beta_init = 1.0;
  double beta_lr = 1e-4;
  int epochs = 100;
  int batch = 512;
  int subject_cap = 2500;  // events drawn per training subject per epoch
  uint64_t seed = 1;
  uint64_t fx_seed = 77;
  std::string fx_kind = "random";  // random | identity | external
  std::string fx_weights;          // checkpoint-format file for fx_kind=external

  void validate() const;
};

struct BetaState {
  double beta = 1.0;
  double beta_lr = 1e-4;
};

// beta <- clamp(beta + beta_lr * (mean_kl - mean_perceptual), 0, 1)
BetaState update_beta(const BetaState& state, double mean_kl, double mean_perceptual);

// Fixed feature pyramid for the perceptual loss. Never trained.
struct FeatureExtractor {
  enum class Kind { kRandom, kIdentity, kExternal };
  Kind kind = Kind::kRandom;
  int replicate = 1;  // input channel replication for multi-channel weights
  std::vector<Tensor> weights;  // per stage (O,C,3,3), stride 2
  std::vector<Tensor> biases;

  static FeatureExtractor random(uint64_t seed);
  static FeatureExtractor identity();
  static FeatureExtractor external(const std::filesystem::path& weights_file);
  static FeatureExtractor make(const std::string& kind, uint64_t seed,
                               const std::string& weights_file);

  // Feature maps of x (N,C,H,W) in stage order; x itself for identity.
  std::vector<Var> features(Graph& g, Var x) const;
};

// Sum over stages of the mean squared feature difference.
Var perceptual_loss(Graph& g, const FeatureExtractor& fx, Var x, Var xhat);

// 0.5 * sum_d(mu^2 + exp(logvar) - logvar - 1), averaged over the batch.
Var kl_loss(Graph& g, Var mu, Var logvar);

// (1-beta)*perceptual + beta*kl with beta held constant.
Var pretrain_loss(Graph& g, Var perceptual, Var kl, double beta);

// z = mu + exp(logvar/2) * eps
Var reparameterize(Graph& g, Var mu, Var logvar, Var eps);

class Vae {
 public:
  static Vae init(const VaeConfig& cfg);
  static Vae from_checkpoint(const Checkpoint& ck);
  Checkpoint to_checkpoint(double beta, long epoch) const;

  const VaeConfig& config() const { return cfg_; }
  std::size_t param_count() const { return tensors_.size(); }
  Tensor& tensor(const std::string& name);

  struct Bound {
    std::vector<Var> vars;  // aligned with parameter order
  };
  Bound bind(Graph& g, bool requires_grad) const;

  // x (N,1,H,W) -> mu, logvar (N,latent); logvar clamped to [-10,10].
  std::pair<Var, Var> encode(Graph& g, const Bound& b, Var x) const;
  // z (N,latent) -> (N,1,H,W) in (0,1)
  Var decode(Graph& g, const Bound& b, Var z) const;

  // Inference conveniences (fresh internal graph, no gradients).
  Tensor encode_mu(const Tensor& batch) const;          // (N,latent)
  std::pair<Tensor, Tensor> encode_dist(const Tensor& batch) const;
  Tensor decode_batch(const Tensor& z) const;           // (N,1,H,W)

  std::vector<Tensor*> params();
  const std::vector<std::string>& names() const { return names_; }

 private:
  Vae() = default;
  int idx(const std::string& name) const;

  VaeConfig cfg_;
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::map<std::string, int> index_;
};

struct EpochLog {
  long epoch = 0;
  double mean_perceptual = 0.0;
  double mean_kl = 0.0;
  double beta = 0.0;
  double val_perceptual = 0.0;
  double val_kl = 0.0;
};

struct PretrainResult {
  Checkpoint checkpoint;  // reloaded from disk, so float32-canonical
  std::vector<EpochLog> log;
};

// Trains on train_subjects, monitors val_subjects, writes the checkpoint
// each epoch plus the training-curve CSV.
PretrainResult pretrain(const EventImageSet& data, const std::vector<std::string>& train_subjects,
                        const std::vector<std::string>& val_subjects, const VaeConfig& cfg,
                        const std::filesystem::path& checkpoint_path,
                        const std::filesystem::path& log_csv);

void write_pretrain_log(const std::filesystem::path& path, const std::vector<EpochLog>& log);

// Perceptual loss between each image and decode(mu); deterministic.
std::vector<double> per_event_reconstruction_loss(const EventImageSet& data, const Vae& vae,
                                                  const FeatureExtractor& fx,
                                                  std::size_t batch = 64);

}  // namespace hfo
