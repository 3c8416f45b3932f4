#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "hfo/types.hpp"

namespace hfo {

std::vector<HfoEvent> load_events(const std::filesystem::path& path, const std::string& subject);
void save_events(const std::filesystem::path& path, const std::vector<HfoEvent>& events);

struct WaveformData {
  uint32_t sample_rate = 0;
  std::vector<float> samples;
};

WaveformData load_waveform(const std::filesystem::path& path);
void save_waveform(const std::filesystem::path& path, uint32_t sample_rate,
                   const std::vector<float>& samples);

// Loads subjects, per-subject event tables and the waveform index, then
// cross-checks every reference. Waveform samples stay on disk.
DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

// Caches decoded waveforms keyed by (subject, channel).
class WaveformStore {
 public:
  explicit WaveformStore(const DatasetManifest& manifest) : manifest_(manifest) {}
  const Recording& get(const std::string& subject, const std::string& channel);

 private:
  const DatasetManifest& manifest_;
  std::map<std::pair<std::string, std::string>, Recording> cache_;
};

// Slice of 2*round(window_ms/2 * fs/1000) samples centered on the event
// midpoint; samples outside the recording are zero.
Window extract_window(const Recording& rec, const HfoEvent& event, double window_ms);

std::vector<FoldSplit> make_folds(const DatasetManifest& manifest, int k, uint64_t seed,
                                  double val_fraction = 0.2);

}  // namespace hfo
