#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace hfo {

enum class Outcome { kSeizureFree, kNotSeizureFree, kUnknown };

std::string to_string(Outcome o);
Outcome outcome_from_string(const std::string& s);

// One channel of one subject's recording.
struct Recording {
  std::string subject;
  std::string channel;
  uint32_t sample_rate = 0;  // Hz
  std::vector<float> samples;  // microvolts
};

// A detector-emitted candidate event, identified by its interval.
struct HfoEvent {
  std::string subject;
  std::string channel;
  double start_ms = 0.0;
  double end_ms = 0.0;
  std::string detector;

  // Canonical identity string; also the hashing key for order-free draws.
  std::string id() const;
};

bool event_order_less(const HfoEvent& a, const HfoEvent& b);

// Fixed-length waveform slice centered on an event midpoint.
struct Window {
  std::vector<double> samples;
  double center_ms = 0.0;
  std::size_t center_index = 0;  // sample index of the midpoint in the recording
};

struct SubjectRecord {
  std::string id;
  std::string institution;
  Outcome outcome = Outcome::kUnknown;
  std::set<std::string> resected_channels;
};

struct DatasetManifest {
  std::filesystem::path root;  // directory the manifest file lives in
  std::vector<SubjectRecord> subjects;
  // subject -> events csv (relative to root)
  std::map<std::string, std::string> event_files;
  // subject -> channel -> waveform file (relative to root)
  std::map<std::string, std::map<std::string, std::string>> waveform_files;
  // all events, sorted by (subject, channel, start_ms)
  std::vector<HfoEvent> events;

  const SubjectRecord* find_subject(const std::string& id) const;
};

struct FoldSplit {
  int fold_id = 0;
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

}  // namespace hfo
