#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "hfo/rng.hpp"
#include "hfo/types.hpp"

namespace hfo {

enum class EventClass { kPathological, kPhysiological, kNoise };

std::string to_string(EventClass c);
EventClass event_class_from_string(const std::string& s);

struct SynthConfig {
  int n_subjects = 20;
  int events_per_subject = 200;
  int channels_per_subject = 8;
  uint32_t sample_rate = 2000;  // Hz
  // proportions over {pathological, physiological, noise}
  std::array<double, 3> class_mix = {0.3, 0.4, 0.3};
  double snr_db = 15.0;  // burst RMS over the pink-noise floor; -inf leaves floor only
  // fraction of a seizure-free subject's pathological events placed in
  // to-be-resected channels; failed-outcome subjects get an even split
  double resection_coverage = 0.9;
  uint64_t seed = 1;

  void validate() const;
};

// Unit-RMS burst for one event; the caller scales it onto the noise floor.
std::vector<double> generate_event_waveform(EventClass cls, double fs, Rng& rng);

struct SynthDataset {
  DatasetManifest manifest;  // relative paths, root unset until written
  // (subject, channel) -> samples
  std::map<std::pair<std::string, std::string>, Recording> recordings;
  // event id -> true class, scoring only
  std::map<std::string, EventClass> true_class;
};

SynthDataset generate_dataset(const SynthConfig& config);

// Writes manifest.json, per-subject event CSVs, HFOW waveforms and
// ground_truth.csv under dir. Returns the manifest path.
std::filesystem::path write_synth_dataset(const std::filesystem::path& dir,
                                          const SynthDataset& ds);

std::map<std::string, EventClass> load_ground_truth(const std::filesystem::path& path);

}  // namespace hfo
