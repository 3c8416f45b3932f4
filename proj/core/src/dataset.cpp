#include "hfo/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "hfo/common.hpp"
#include "hfo/csvio.hpp"
#include "hfo/rng.hpp"

namespace hfo {

std::string to_string(Outcome o) {
  switch (o) {
    case Outcome::kSeizureFree: return "seizure_free";
    case Outcome::kNotSeizureFree: return "not_seizure_free";
    default: return "unknown";
  }
}

Outcome outcome_from_string(const std::string& s) {
  if (s == "seizure_free") return Outcome::kSeizureFree;
  if (s == "not_seizure_free") return Outcome::kNotSeizureFree;
  if (s == "unknown") return Outcome::kUnknown;
  throw ValidationError("unknown outcome value: '" + s + "'");
}

std::string HfoEvent::id() const {
  return subject + "|" + channel + "|" + format_double(start_ms) + "|" + format_double(end_ms);
}

bool event_order_less(const HfoEvent& a, const HfoEvent& b) {
  if (a.subject != b.subject) return a.subject < b.subject;
  if (a.channel != b.channel) return a.channel < b.channel;
  if (a.start_ms != b.start_ms) return a.start_ms < b.start_ms;
  if (a.end_ms != b.end_ms) return a.end_ms < b.end_ms;
  return a.detector < b.detector;
}

const SubjectRecord* DatasetManifest::find_subject(const std::string& id) const {
  auto it = std::lower_bound(subjects.begin(), subjects.end(), id,
                             [](const SubjectRecord& s, const std::string& v) { return s.id < v; });
  if (it == subjects.end() || it->id != id) return nullptr;
  return &*it;
}

static const std::vector<std::string> kEventHeader = {"subject", "channel", "start_ms", "end_ms",
                                                      "detector"};

std::vector<HfoEvent> load_events(const std::filesystem::path& path, const std::string& subject) {
  CsvTable table = read_csv(path);
  if (table.header != kEventHeader) {
    throw ValidationError("bad event csv header in " + path.string());
  }
  std::vector<HfoEvent> events;
  events.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    HfoEvent e;
    e.subject = row[0];
    e.channel = row[1];
    e.start_ms = parse_double(row[2], path.string());
    e.end_ms = parse_double(row[3], path.string());
    e.detector = row[4];
    if (!subject.empty() && e.subject != subject) {
      throw ValidationError("event for subject '" + e.subject + "' in file owned by '" + subject +
                            "': " + path.string());
    }
    if (!(std::isfinite(e.start_ms) && std::isfinite(e.end_ms)) || e.start_ms < 0.0 ||
        e.end_ms <= e.start_ms) {
      throw ValidationError("bad event interval [" + row[2] + "," + row[3] + ") in " +
                            path.string());
    }
    events.push_back(std::move(e));
  }
  std::sort(events.begin(), events.end(), event_order_less);
  for (std::size_t i = 1; i < events.size(); ++i) {
    if (events[i].id() == events[i - 1].id()) {
      throw ValidationError("duplicate event " + events[i].id() + " in " + path.string());
    }
  }
  return events;
}

void save_events(const std::filesystem::path& path, const std::vector<HfoEvent>& events) {
  CsvTable table;
  table.header = kEventHeader;
  std::vector<HfoEvent> sorted = events;
  std::sort(sorted.begin(), sorted.end(), event_order_less);
  for (const auto& e : sorted) {
    table.rows.push_back(
        {e.subject, e.channel, format_double(e.start_ms), format_double(e.end_ms), e.detector});
  }
  write_csv(path, table);
}

static constexpr char kWaveMagic[4] = {'H', 'F', 'O', 'W'};
static constexpr uint32_t kWaveVersion = 1;

static uint32_t read_u32_le(const unsigned char* p) {
  return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
}

static void append_u32_le(std::string& out, uint32_t v) {
  out.push_back(char(v & 0xff));
  out.push_back(char((v >> 8) & 0xff));
  out.push_back(char((v >> 16) & 0xff));
  out.push_back(char((v >> 24) & 0xff));
}

WaveformData load_waveform(const std::filesystem::path& path) {
  std::string raw = read_file(path);
  if (raw.size() < 16 || std::memcmp(raw.data(), kWaveMagic, 4) != 0) {
    throw ValidationError("not a waveform file: " + path.string());
  }
  const auto* p = reinterpret_cast<const unsigned char*>(raw.data());
  uint32_t version = read_u32_le(p + 4);
  if (version != kWaveVersion) {
    throw ValidationError("unsupported waveform version " + std::to_string(version) + " in " +
                          path.string());
  }
  WaveformData wf;
  wf.sample_rate = read_u32_le(p + 8);
  uint32_t count = read_u32_le(p + 12);
  if (wf.sample_rate == 0) throw ValidationError("zero sample rate in " + path.string());
  if (raw.size() != 16 + std::size_t(count) * 4) {
    throw ValidationError("truncated waveform file: " + path.string());
  }
  wf.samples.resize(count);
  static_assert(sizeof(float) == 4);
  std::memcpy(wf.samples.data(), raw.data() + 16, std::size_t(count) * 4);
  return wf;
}

void save_waveform(const std::filesystem::path& path, uint32_t sample_rate,
                   const std::vector<float>& samples) {
  std::string out;
  out.reserve(16 + samples.size() * 4);
  out.append(kWaveMagic, 4);
  append_u32_le(out, kWaveVersion);
  append_u32_le(out, sample_rate);
  append_u32_le(out, uint32_t(samples.size()));
  std::size_t off = out.size();
  out.resize(off + samples.size() * 4);
  std::memcpy(out.data() + off, samples.data(), samples.size() * 4);
  write_file_atomic(path, out);
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("manifest parse error in " + path.string() + ": " + e.what());
  }
  DatasetManifest m;
  m.root = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  try {
    for (const auto& js : doc.at("subjects")) {
      SubjectRecord rec;
      rec.id = js.at("id").get<std::string>();
      rec.institution = js.at("institution").get<std::string>();
      rec.outcome = outcome_from_string(js.at("outcome").get<std::string>());
      for (const auto& ch : js.at("resected_channels")) {
        rec.resected_channels.insert(ch.get<std::string>());
      }
      m.subjects.push_back(std::move(rec));
    }
    for (auto it = doc.at("events").begin(); it != doc.at("events").end(); ++it) {
      m.event_files[it.key()] = it.value().get<std::string>();
    }
    for (auto it = doc.at("waveforms").begin(); it != doc.at("waveforms").end(); ++it) {
      for (auto jt = it.value().begin(); jt != it.value().end(); ++jt) {
        m.waveform_files[it.key()][jt.key()] = jt.value().get<std::string>();
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("manifest schema error in " + path.string() + ": " + e.what());
  }

  std::sort(m.subjects.begin(), m.subjects.end(),
            [](const SubjectRecord& a, const SubjectRecord& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < m.subjects.size(); ++i) {
    if (m.subjects[i].id == m.subjects[i - 1].id) {
      throw ValidationError("duplicate subject '" + m.subjects[i].id + "' in manifest");
    }
  }

  for (const auto& s : m.subjects) {
    auto wit = m.waveform_files.find(s.id);
    if (wit == m.waveform_files.end() || wit->second.empty()) {
      throw ValidationError("subject '" + s.id + "' has no waveform entries");
    }
    for (const auto& [ch, rel] : wit->second) {
      if (!std::filesystem::exists(m.root / rel)) {
        throw ValidationError("missing waveform file for subject '" + s.id + "' channel '" + ch +
                              "': " + (m.root / rel).string());
      }
    }
    for (const auto& ch : s.resected_channels) {
      if (!wit->second.count(ch)) {
        throw ValidationError("resected channel '" + ch + "' of subject '" + s.id +
                              "' has no recording");
      }
    }
    auto eit = m.event_files.find(s.id);
    if (eit == m.event_files.end()) {
      throw ValidationError("subject '" + s.id + "' has no event file entry");
    }
    auto events = load_events(m.root / eit->second, s.id);
    for (const auto& e : events) {
      if (!wit->second.count(e.channel)) {
        throw ValidationError("event " + e.id() + " references unknown channel '" + e.channel +
                              "'");
      }
    }
    m.events.insert(m.events.end(), events.begin(), events.end());
  }
  for (const auto& [sid, rel] : m.event_files) {
    if (!m.find_subject(sid)) {
      throw ValidationError("event file entry for unknown subject '" + sid + "'");
    }
  }
  for (const auto& [sid, chans] : m.waveform_files) {
    if (!m.find_subject(sid)) {
      throw ValidationError("waveform entries for unknown subject '" + sid + "'");
    }
  }
  std::sort(m.events.begin(), m.events.end(), event_order_less);
  return m;
}

void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  nlohmann::json doc;
  doc["subjects"] = nlohmann::json::array();
  for (const auto& s : manifest.subjects) {
    nlohmann::json js;
    js["id"] = s.id;
    js["institution"] = s.institution;
    js["outcome"] = to_string(s.outcome);
    js["resected_channels"] = s.resected_channels;
    doc["subjects"].push_back(js);
  }
  doc["events"] = manifest.event_files;
  doc["waveforms"] = manifest.waveform_files;
  write_file_atomic(path, doc.dump(2) + "\n");
}

const Recording& WaveformStore::get(const std::string& subject, const std::string& channel) {
  auto key = std::make_pair(subject, channel);
  auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;
  auto sit = manifest_.waveform_files.find(subject);
  if (sit == manifest_.waveform_files.end() || !sit->second.count(channel)) {
    throw ValidationError("no waveform for subject '" + subject + "' channel '" + channel + "'");
  }
  WaveformData wf = load_waveform(manifest_.root / sit->second.at(channel));
  Recording rec;
  rec.subject = subject;
  rec.channel = channel;
  rec.sample_rate = wf.sample_rate;
  rec.samples = std::move(wf.samples);
  return cache_.emplace(std::move(key), std::move(rec)).first->second;
}

Window extract_window(const Recording& rec, const HfoEvent& event, double window_ms) {
  if (rec.samples.empty()) throw ValidationError("empty recording for " + event.id());
  if (window_ms <= 0.0) throw ValidationError("window length must be positive");
  const double fs = double(rec.sample_rate);
  const long half = std::lround(0.5 * window_ms * fs / 1000.0);
  if (half <= 0) throw ValidationError("window length rounds to zero samples");
  Window w;
  w.center_ms = 0.5 * (event.start_ms + event.end_ms);
  const long center = std::lround(w.center_ms * fs / 1000.0);
  const long n = long(rec.samples.size());
  if (center < 0 || center >= n) {
    throw ValidationError("event midpoint outside recording: " + event.id());
  }
  w.center_index = std::size_t(center);
  w.samples.assign(std::size_t(2 * half), 0.0);
  const long first = center - half;
  for (long i = 0; i < 2 * half; ++i) {
    const long idx = first + i;
    if (idx >= 0 && idx < n) w.samples[std::size_t(i)] = double(rec.samples[std::size_t(idx)]);
  }
  return w;
}

std::vector<FoldSplit> make_folds(const DatasetManifest& manifest, int k, uint64_t seed,
                                  double val_fraction) {
  if (k < 2) throw ValidationError("fold count must be at least 2");
  if (std::size_t(k) > manifest.subjects.size()) {
    throw ValidationError("more folds than subjects");
  }
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    throw ValidationError("val fraction must be in [0,1)");
  }

  // Institution strata in name order, subjects shuffled within each stratum.
  std::map<std::string, std::vector<std::string>> strata;
  for (const auto& s : manifest.subjects) strata[s.institution].push_back(s.id);
  for (auto& [inst, ids] : strata) {
    std::sort(ids.begin(), ids.end());
    Rng rng = Rng::stream(seed, "folds", Rng::hash_str(inst));
    for (std::size_t i = ids.size(); i > 1; --i) {
      std::swap(ids[i - 1], ids[rng.below(i)]);
    }
  }

  std::vector<std::vector<std::string>> fold_members(static_cast<std::size_t>(k));
  for (const auto& [inst, ids] : strata) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      fold_members[i % std::size_t(k)].push_back(ids[i]);
    }
  }

  std::vector<FoldSplit> folds;
  for (int f = 0; f < k; ++f) {
    FoldSplit split;
    split.fold_id = f;
    split.test = fold_members[std::size_t(f)];
    std::set<std::string> test_set(split.test.begin(), split.test.end());

    // Remaining subjects per stratum, still in shuffled order.
    std::vector<std::pair<std::string, std::vector<std::string>>> rest;
    std::size_t rest_total = 0;
    for (const auto& [inst, ids] : strata) {
      std::vector<std::string> keep;
      for (const auto& id : ids) {
        if (!test_set.count(id)) keep.push_back(id);
      }
      rest_total += keep.size();
      rest.emplace_back(inst, std::move(keep));
    }

    // Apportion the validation target across strata by largest remainder.
    const long val_target = std::lround(val_fraction * double(rest_total));
    std::vector<std::size_t> quota(rest.size(), 0);
    if (val_target > 0 && rest_total > 0) {
      std::vector<std::pair<double, std::size_t>> frac;
      long assigned = 0;
      for (std::size_t i = 0; i < rest.size(); ++i) {
        double exact = double(val_target) * double(rest[i].second.size()) / double(rest_total);
        quota[i] = std::size_t(std::floor(exact));
        assigned += long(quota[i]);
        frac.emplace_back(exact - std::floor(exact), i);
      }
      std::stable_sort(frac.begin(), frac.end(),
                       [](const auto& a, const auto& b) { return a.first > b.first; });
      for (std::size_t j = 0; assigned < val_target && j < frac.size(); ++j) {
        std::size_t i = frac[j].second;
        if (quota[i] < rest[i].second.size()) {
          ++quota[i];
          ++assigned;
        }
      }
    }

    for (std::size_t i = 0; i < rest.size(); ++i) {
      const auto& ids = rest[i].second;
      for (std::size_t j = 0; j < ids.size(); ++j) {
        (j < quota[i] ? split.val : split.train).push_back(ids[j]);
      }
    }
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.val.begin(), split.val.end());
    std::sort(split.test.begin(), split.test.end());
    folds.push_back(std::move(split));
  }
  return folds;
}

}  // namespace hfo
