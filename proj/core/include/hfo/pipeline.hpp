#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "hfo/classifier.hpp"
#include "hfo/dataset.hpp"
#include "hfo/discovery.hpp"
#include "hfo/metrics.hpp"
#include "hfo/tf.hpp"
#include "hfo/vae.hpp"

namespace hfo {

struct PipelineConfig {
  std::filesystem::path manifest_path;
  std::filesystem::path work;
  uint64_t seed = 1;
  int kfolds = 5;
  double val_fraction = 0.2;
  double window_ms = 570.0;
  TfConfig tf;
  VaeConfig vae;
  ClassifierConfig cls;
  int sweep_steps = 8;
  double sweep_lo_q = 0.001;
  double sweep_hi_q = 0.999;
  int knockout_k = 10;

  void validate() const;
};

std::filesystem::path fold_dir(const PipelineConfig& cfg, int fold);

// Scalogram images for the given subjects' events, manifest event order.
EventImageSet build_images(const DatasetManifest& manifest,
                           const std::vector<std::string>& subjects, double window_ms,
                           const TfConfig& tf);

// Encoder means for every event, (n, latent).
Tensor encode_all(const Vae& vae, const EventImageSet& data, std::size_t chunk = 64);

// Validates the manifest, builds the fold table, writes work/folds.json.
void stage_ingest(const PipelineConfig& cfg);
std::vector<FoldSplit> load_folds(const std::filesystem::path& work);

void stage_pretrain(const PipelineConfig& cfg, int fold);
// Returns tie/degeneracy notes for the caller to surface.
std::vector<std::string> stage_discover(const PipelineConfig& cfg, int fold);
void stage_train(const PipelineConfig& cfg, int fold);
void stage_evaluate(const PipelineConfig& cfg, int fold);
void stage_sweep(const PipelineConfig& cfg, int fold);
void stage_knockout(const PipelineConfig& cfg, int fold);
void stage_report(const PipelineConfig& cfg);

// Records seed, config hash and completed stages under work/run_meta.json.
void write_run_meta(const PipelineConfig& cfg, const std::string& stage);

}  // namespace hfo
