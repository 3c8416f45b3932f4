#include "hfo/synth.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "hfo/common.hpp"
#include "hfo/csvio.hpp"
#include "hfo/dataset.hpp"
#include "hfo/fft.hpp"

namespace hfo {

std::string to_string(EventClass c) {
  switch (c) {
    case EventClass::kPathological: return "pathological";
    case EventClass::kPhysiological: return "physiological";
    default: return "noise";
  }
}

EventClass event_class_from_string(const std::string& s) {
  if (s == "pathological") return EventClass::kPathological;
  if (s == "physiological") return EventClass::kPhysiological;
  if (s == "noise") return EventClass::kNoise;
  throw ValidationError("unknown event class: '" + s + "'");
}

void SynthConfig::validate() const {
  if (n_subjects <= 0 || events_per_subject <= 0 || channels_per_subject <= 0) {
    throw ValidationError("synth counts must be positive");
  }
  if (sample_rate <= 1000) {
    throw ValidationError("sample rate must exceed 1000 Hz to cover the artifact band");
  }
  double sum = 0.0;
  for (double p : class_mix) {
    if (!(p >= 0.0)) throw ValidationError("class mix proportions must be non-negative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("class mix must sum to 1");
  if (!(resection_coverage >= 0.0 && resection_coverage <= 1.0)) {
    throw ValidationError("resection coverage must be in [0,1]");
  }
  if (std::isnan(snr_db)) throw ValidationError("snr_db must not be NaN");
}

static void rms_normalize(std::vector<double>& v) {
  double ss = 0.0;
  for (double x : v) ss += x * x;
  double rms = std::sqrt(ss / double(v.size()));
  if (rms > 0.0) {
    for (double& x : v) x /= rms;
  }
}

// Real pink noise with unit RMS, spectrum amplitude proportional to 1/f.
static std::vector<double> pink_noise(std::size_t n, Rng& rng) {
  const std::size_t N = next_pow2(std::max<std::size_t>(n, 2));
  std::vector<std::complex<double>> spec(N, {0.0, 0.0});
  for (std::size_t k = 1; k <= N / 2; ++k) {
    double re = rng.normal();
    double im = (k == N / 2) ? 0.0 : rng.normal();
    spec[k] = std::complex<double>(re, im) / double(k);
    if (k != N / 2) spec[N - k] = std::conj(spec[k]);
  }
  fft(spec, true);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = spec[i].real();
  rms_normalize(out);
  return out;
}

static std::vector<double> band_limited_noise(std::size_t n, double fs, double f_lo, double f_hi,
                                              Rng& rng) {
  const std::size_t N = next_pow2(std::max<std::size_t>(n, 2));
  std::vector<std::complex<double>> spec(N, {0.0, 0.0});
  for (std::size_t i = 0; i < n; ++i) spec[i] = rng.normal();
  fft(spec, false);
  for (std::size_t k = 0; k < N; ++k) {
    double f = double(std::min(k, N - k)) * fs / double(N);
    if (f < f_lo || f > f_hi) spec[k] = 0.0;
  }
  fft(spec, true);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = spec[i].real();
  return out;
}

std::vector<double> generate_event_waveform(EventClass cls, double fs, Rng& rng) {
  constexpr double kPi = std::numbers::pi;
  const double dur_ms = rng.uniform(60.0, 120.0);
  const std::size_t n = std::size_t(std::max(8L, std::lround(dur_ms * fs / 1000.0)));
  std::vector<double> hann(n);
  for (std::size_t i = 0; i < n; ++i) {
    hann[i] = 0.5 * (1.0 - std::cos(2.0 * kPi * double(i) / double(n - 1)));
  }
  std::vector<double> out(n, 0.0);
  switch (cls) {
    case EventClass::kPathological: {
      const double f0 = rng.uniform(250.0, 290.0);
      const double phase = rng.uniform(0.0, 2.0 * kPi);
      std::vector<double> ripple(n), spike(n);
      for (std::size_t i = 0; i < n; ++i) {
        ripple[i] = hann[i] * std::sin(2.0 * kPi * f0 * double(i) / fs + phase);
      }
      rms_normalize(ripple);
      // Biphasic sharp transient at the burst center.
      const double sigma = 0.003 * fs;
      const double tc = 0.5 * double(n - 1);
      for (std::size_t i = 0; i < n; ++i) {
        double t = double(i) - tc;
        spike[i] = -t / sigma * std::exp(-t * t / (2.0 * sigma * sigma));
      }
      rms_normalize(spike);
      for (std::size_t i = 0; i < n; ++i) out[i] = ripple[i] + spike[i];
      break;
    }
    case EventClass::kPhysiological: {
      const double f0 = rng.uniform(90.0, 150.0);
      const double phase = rng.uniform(0.0, 2.0 * kPi);
      for (std::size_t i = 0; i < n; ++i) {
        out[i] = hann[i] * std::sin(2.0 * kPi * f0 * double(i) / fs + phase);
      }
      break;
    }
    case EventClass::kNoise: {
      out = band_limited_noise(n, fs, 10.0, 500.0, rng);
      for (std::size_t i = 0; i < n; ++i) out[i] *= hann[i];
      break;
    }
  }
  rms_normalize(out);
  return out;
}

// Exact per-class counts: floor the quotas, then hand out the remainder by
// largest fractional part (ties to the lower class index).
static std::array<int, 3> class_counts(int total, const std::array<double, 3>& mix) {
  std::array<int, 3> counts{};
  std::array<double, 3> frac{};
  int assigned = 0;
  for (int c = 0; c < 3; ++c) {
    double exact = double(total) * mix[std::size_t(c)];
    counts[std::size_t(c)] = int(std::floor(exact));
    frac[std::size_t(c)] = exact - std::floor(exact);
    assigned += counts[std::size_t(c)];
  }
  std::array<int, 3> order = {0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return frac[std::size_t(a)] > frac[std::size_t(b)]; });
  for (int j = 0; assigned < total && j < 3; ++j) {
    ++counts[std::size_t(order[std::size_t(j)])];
    ++assigned;
  }
  return counts;
}

SynthDataset generate_dataset(const SynthConfig& config) {
  config.validate();
  constexpr double kSlotMs = 1000.0;
  const double fs = double(config.sample_rate);
  const std::size_t slot_samples = std::size_t(std::lround(kSlotMs * fs / 1000.0));
  const double burst_scale = std::pow(10.0, config.snr_db / 20.0);

  SynthDataset ds;
  std::size_t width = std::max<std::size_t>(3, std::to_string(config.n_subjects - 1).size());

  for (int si = 0; si < config.n_subjects; ++si) {
    SubjectRecord rec;
    std::string num = std::to_string(si);
    rec.id = "s" + std::string(width - num.size(), '0') + num;
    rec.institution = (si % 2 == 0) ? "instA" : "instB";
    rec.outcome = (si % 3 != 2) ? Outcome::kSeizureFree : Outcome::kNotSeizureFree;

    Rng rng = Rng::stream(config.seed, "synth", uint64_t(si));

    const int C = config.channels_per_subject;
    std::vector<std::string> channels;
    for (int c = 0; c < C; ++c) channels.push_back("ch" + std::to_string(c));
    std::vector<int> perm(static_cast<std::size_t>(C));
    for (int c = 0; c < C; ++c) perm[std::size_t(c)] = c;
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    const int n_resected = std::max(1, (3 * C) / 8);
    std::vector<std::string> resected, preserved;
    for (int c = 0; c < C; ++c) {
      auto& dst = (c < n_resected) ? resected : preserved;
      dst.push_back(channels[std::size_t(perm[std::size_t(c)])]);
    }
    std::sort(resected.begin(), resected.end());
    std::sort(preserved.begin(), preserved.end());
    rec.resected_channels.insert(resected.begin(), resected.end());

    auto counts = class_counts(config.events_per_subject, config.class_mix);
    std::vector<EventClass> labels;
    for (int c = 0; c < 3; ++c) {
      labels.insert(labels.end(), std::size_t(counts[std::size_t(c)]), EventClass(c));
    }
    for (std::size_t i = labels.size(); i > 1; --i) std::swap(labels[i - 1], labels[rng.below(i)]);

    const int n_path = counts[0];
    const double cover =
        (rec.outcome == Outcome::kSeizureFree) ? config.resection_coverage : 0.5;
    const int path_in_resected = int(std::ceil(cover * double(n_path)));

    std::map<std::string, int> slots_used;
    struct Placement {
      std::string channel;
      std::size_t center_sample;
      std::vector<double> burst;
    };
    std::vector<Placement> placements;
    std::vector<HfoEvent> events;

    int path_rank = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      EventClass cls = labels[i];
      std::string channel;
      if (cls == EventClass::kPathological) {
        bool to_resected = (path_rank < path_in_resected) || preserved.empty();
        ++path_rank;
        const auto& pool = to_resected ? resected : preserved;
        channel = pool[rng.below(pool.size())];
      } else {
        channel = channels[rng.below(channels.size())];
      }
      std::vector<double> burst = generate_event_waveform(cls, fs, rng);

      int slot = slots_used[channel]++;
      double center_ms = (double(slot) + 0.5) * kSlotMs;
      double dur_ms = double(burst.size()) / fs * 1000.0;

      HfoEvent ev;
      ev.subject = rec.id;
      ev.channel = channel;
      ev.start_ms = center_ms - 0.5 * dur_ms;
      ev.end_ms = center_ms + 0.5 * dur_ms;
      ev.detector = "synth";
      ds.true_class[ev.id()] = cls;
      events.push_back(ev);

      Placement p;
      p.channel = channel;
      p.center_sample = std::size_t(std::lround(center_ms * fs / 1000.0));
      p.burst = std::move(burst);
      placements.push_back(std::move(p));
    }

    for (int c = 0; c < C; ++c) {
      const std::string& ch = channels[std::size_t(c)];
      int n_slots = std::max(1, slots_used.count(ch) ? slots_used[ch] : 0);
      std::size_t len = std::size_t(n_slots) * slot_samples;
      Rng pink_rng = Rng::stream(config.seed, "pink", uint64_t(si), uint64_t(c));
      std::vector<double> floor = pink_noise(len, pink_rng);
      for (const auto& p : placements) {
        if (p.channel != ch) continue;
        std::size_t first = p.center_sample - p.burst.size() / 2;
        for (std::size_t j = 0; j < p.burst.size(); ++j) {
          floor[first + j] += burst_scale * p.burst[j];
        }
      }
      Recording r;
      r.subject = rec.id;
      r.channel = ch;
      r.sample_rate = config.sample_rate;
      r.samples.resize(len);
      for (std::size_t j = 0; j < len; ++j) r.samples[j] = float(floor[j]);
      ds.recordings[{rec.id, ch}] = std::move(r);
      ds.manifest.waveform_files[rec.id][ch] = rec.id + "/" + ch + ".hfow";
    }

    ds.manifest.event_files[rec.id] = rec.id + "/events.csv";
    ds.manifest.subjects.push_back(std::move(rec));
    ds.manifest.events.insert(ds.manifest.events.end(), events.begin(), events.end());
  }

  std::sort(ds.manifest.subjects.begin(), ds.manifest.subjects.end(),
            [](const SubjectRecord& a, const SubjectRecord& b) { return a.id < b.id; });
  std::sort(ds.manifest.events.begin(), ds.manifest.events.end(), event_order_less);
  return ds;
}

std::filesystem::path write_synth_dataset(const std::filesystem::path& dir,
                                          const SynthDataset& ds) {
  std::filesystem::create_directories(dir);
  for (const auto& s : ds.manifest.subjects) {
    std::vector<HfoEvent> subject_events;
    for (const auto& e : ds.manifest.events) {
      if (e.subject == s.id) subject_events.push_back(e);
    }
    save_events(dir / ds.manifest.event_files.at(s.id), subject_events);
    for (const auto& [ch, rel] : ds.manifest.waveform_files.at(s.id)) {
      const Recording& r = ds.recordings.at({s.id, ch});
      save_waveform(dir / rel, r.sample_rate, r.samples);
    }
  }
  save_manifest(dir / "manifest.json", ds.manifest);

  CsvTable gt;
  gt.header = {"subject", "channel", "start_ms", "end_ms", "true_class"};
  for (const auto& e : ds.manifest.events) {
    gt.rows.push_back({e.subject, e.channel, format_double(e.start_ms), format_double(e.end_ms),
                       to_string(ds.true_class.at(e.id()))});
  }
  write_csv(dir / "ground_truth.csv", gt);
  return dir / "manifest.json";
}

std::map<std::string, EventClass> load_ground_truth(const std::filesystem::path& path) {
  CsvTable table = read_csv(path);
  const std::vector<std::string> expected = {"subject", "channel", "start_ms", "end_ms",
                                             "true_class"};
  if (table.header != expected) {
    throw ValidationError("bad ground truth header in " + path.string());
  }
  std::map<std::string, EventClass> out;
  for (const auto& row : table.rows) {
    HfoEvent e;
    e.subject = row[0];
    e.channel = row[1];
    e.start_ms = parse_double(row[2], path.string());
    e.end_ms = parse_double(row[3], path.string());
    out[e.id()] = event_class_from_string(row[4]);
  }
  return out;
}

}  // namespace hfo
