#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hfo/checkpoint.hpp"
#include "hfo/rng.hpp"
#include "hfo/vae.hpp"

namespace hfo {

// Head on top of the frozen encoder: latent -> hidden -> 1, relu + sigmoid.
struct ClassifierParams {
  Tensor w1;  // (latent, hidden)
  Tensor b1;  // (hidden)
  Tensor w2;  // (hidden, 1)
  Tensor b2;  // (1)

  int latent_dim() const { return int(w1.dim(0)); }
  int hidden() const { return int(w1.dim(1)); }
};

struct ClassifierConfig {
  double lr = 3e-4;
  double weight_decay = 1e-5;
  int batch = 4096;  // or all events when fewer
  int epochs = 9;
  bool augment = true;  // second BCE term on surrogate latents
  double threshold = 0.5;
  int hidden = 0;  // 0 -> 2 * latent_dim
  uint64_t seed = 2;

  void validate() const;
};

ClassifierParams init_classifier(int latent_dim, int hidden, uint64_t seed);

// decode(reparameterize(encode(image))); one z sample from rng.
Tensor make_surrogate(const Vae& vae, const Tensor& image, Rng& rng);

// Encoder mean of a (H,W) image.
Tensor embed(const Vae& vae, const Tensor& image);

// Probabilities for latent rows (N,latent) -> (N), clamped to [1e-7, 1-1e-7].
Tensor classifier_probs(const ClassifierParams& psi, const Tensor& mu);

// Mean over the batch of BCE(p_real,l) + BCE(p_surr,l). p_surr empty drops
// the surrogate term.
double classifier_loss(const Tensor& p_real, const Tensor& p_surr, const std::vector<int>& labels);

struct TrainEpochLog {
  long epoch = 0;
  double loss = 0.0;
};

struct ClassifierResult {
  ClassifierParams psi;
  std::vector<TrainEpochLog> log;
};

// Adam on psi only; the encoder is frozen and its parameter hash is checked
// before/after. Fresh surrogate per event per epoch via per-event substreams.
ClassifierResult train_classifier(const EventImageSet& data, const std::vector<int>& labels,
                                  const Vae& vae, const ClassifierConfig& cfg);

void write_train_log(const std::filesystem::path& path, const std::vector<TrainEpochLog>& log);

struct Prediction {
  HfoEvent event;
  double probability = 0.0;
  int label = 0;  // probability strictly above threshold
};

std::vector<Prediction> predict(const EventImageSet& data, const Vae& vae,
                                const ClassifierParams& psi, double threshold = 0.5);

void save_predictions(const std::filesystem::path& path, const std::vector<Prediction>& preds);
std::vector<Prediction> load_predictions(const std::filesystem::path& path);

// Checkpoint section "classifier" holding the head tensors.
void attach_classifier(Checkpoint& ck, const ClassifierParams& psi);
ClassifierParams classifier_from_checkpoint(const Checkpoint& ck);

}  // namespace hfo
