#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "hfo/kmeans.hpp"
#include "hfo/types.hpp"

namespace hfo {

struct WeakLabel {
  HfoEvent event;
  std::string stage_tag;  // noise | physiological | pathological
  int l = 0;              // 1 iff pathological
};

struct BackgroundSplit {
  ClusterModel model;
  int noise_cluster = -1;
  bool tie = false;
  std::vector<std::size_t> noise_idx;  // row indices into the input
  std::vector<std::size_t> hfo_idx;
};

// Stage 1: k-means(k=2) on encoder means; the cluster with the higher mean
// reconstruction loss is background noise (tie -> smaller cluster).
BackgroundSplit split_background(const Tensor& mu, const std::vector<double>& recon_losses,
                                 const std::vector<uint64_t>& ids, uint64_t seed);

struct PathologicalSplit {
  ClusterModel model;
  int pathological_cluster = -1;
  std::vector<double> resected_fraction;  // per cluster
  bool tie = false;
  std::string note;  // set when the fraction tie-break fired
};

// Stage 2: k-means(k=2) on the HFO events of resection-annotated subjects;
// the cluster with the higher fraction of members on resected channels is
// pathological (tie -> higher mean reconstruction loss, reported loudly).
PathologicalSplit split_pathological(const Tensor& mu, const std::vector<char>& resected,
                                     const std::vector<double>& recon_losses,
                                     const std::vector<uint64_t>& ids, uint64_t seed);

// Aligned per-event arrays for one discovery scope.
struct DiscoveryInput {
  std::vector<HfoEvent> events;
  Tensor mu;  // (n, latent)
  std::vector<double> recon_losses;
  std::vector<char> annotated;  // subject has a resection map
  std::vector<char> resected;   // event channel inside the resection
};

struct DiscoveryResult {
  std::vector<WeakLabel> labels;  // aligned with input events
  BackgroundSplit stage1;
  PathologicalSplit stage2;
  std::vector<std::size_t> stage2_rows;  // input rows that fed stage 2
  std::vector<std::string> notes;        // tie reports and degenerate-case flags
};

// Full hierarchy: background split over everything, pathological split over
// annotated HFO events, nearest-centroid fallback for unannotated subjects.
DiscoveryResult discover(const DiscoveryInput& in, uint64_t seed);

void save_weak_labels(const std::filesystem::path& path, const std::vector<WeakLabel>& labels);
std::vector<WeakLabel> load_weak_labels(const std::filesystem::path& path);

}  // namespace hfo
