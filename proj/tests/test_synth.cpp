#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <vector>

#include "hfo/dataset.hpp"
#include "hfo/rng.hpp"
#include "hfo/synth.hpp"
#include "hfo/tf.hpp"

namespace fs = std::filesystem;
using hfo::EventClass;
using hfo::SynthConfig;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int c = 0;
    path = fs::temp_directory_path() /
           ("hfo_synth_" + std::to_string(::getpid()) + "_" + std::to_string(c++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// row index of the scalogram argmax and its frequency
std::pair<double, hfo::Tensor> peak_freq(const std::vector<double>& samples, double fs) {
  hfo::TfConfig cfg;
  cfg.f_max = fs / 2.0 * 0.98;
  hfo::MorletPlan plan = hfo::make_morlet_plan(samples.size(), fs, cfg);
  hfo::Tensor mag = hfo::apply_morlet(plan, samples);  // rows ascend in frequency
  std::size_t best = 0;
  double best_v = -1.0;
  for (std::size_t i = 0; i < mag.size(); ++i) {
    if (mag[i] > best_v) {
      best_v = mag[i];
      best = i;
    }
  }
  const std::size_t cols = mag.dim(1);
  return {plan.freqs[best / cols], mag};
}

}  // namespace

TEST_CASE("physiological burst peaks in the ripple band") {
  for (uint64_t trial = 0; trial < 5; ++trial) {
    hfo::Rng rng = hfo::Rng::stream(trial, "phys");
    auto w = hfo::generate_event_waveform(EventClass::kPhysiological, 2000.0, rng);
    auto [f, mag] = peak_freq(w, 2000.0);
    CHECK(f >= 80.0);
    CHECK(f <= 165.0);  // one grid bin of slack around the planted 90-150 band
  }
}

namespace {

// fraction of scalogram energy above 250 Hz
double high_band_fraction(EventClass cls, uint64_t trial, const char* tag) {
  hfo::Rng rng = hfo::Rng::stream(trial, tag);
  auto w = hfo::generate_event_waveform(cls, 2000.0, rng);
  hfo::TfConfig cfg;
  cfg.f_max = 2000.0 / 2.0 * 0.98;
  hfo::MorletPlan plan = hfo::make_morlet_plan(w.size(), 2000.0, cfg);
  hfo::Tensor mag = hfo::apply_morlet(plan, w);
  const std::size_t cols = mag.dim(1);
  double hi = 0.0, total = 0.0;
  for (std::size_t r = 0; r < plan.freqs.size(); ++r) {
    for (std::size_t t = 0; t < cols; ++t) {
      const double v = mag[r * cols + t] * mag[r * cols + t];
      total += v;
      if (plan.freqs[r] > 250.0) hi += v;
    }
  }
  return hi / total;
}

}  // namespace

TEST_CASE("pathological burst has fast-ripple energy and a spike column") {
  for (uint64_t trial = 0; trial < 5; ++trial) {
    // the spike transient is broadband with most energy at low frequencies,
    // so the fast ripple shows as a high band clearly above the ripple class
    const double path = high_band_fraction(EventClass::kPathological, trial, "path");
    const double phys = high_band_fraction(EventClass::kPhysiological, trial, "path");
    CHECK(path > 0.02);
    CHECK(path > 3.0 * phys);

    hfo::Rng rng = hfo::Rng::stream(trial, "path");
    auto w = hfo::generate_event_waveform(EventClass::kPathological, 2000.0, rng);
    hfo::TfConfig cfg;
    cfg.f_max = 2000.0 / 2.0 * 0.98;
    hfo::MorletPlan plan = hfo::make_morlet_plan(w.size(), 2000.0, cfg);
    hfo::Tensor mag = hfo::apply_morlet(plan, w);
    const std::size_t cols = mag.dim(1);

    // spike: one column whose summed magnitude across ALL rows dominates the
    // column median (broadband transient)
    std::vector<double> colsum(cols, 0.0);
    for (std::size_t r = 0; r < plan.freqs.size(); ++r) {
      for (std::size_t t = 0; t < cols; ++t) colsum[t] += mag[r * cols + t];
    }
    std::vector<double> sorted = colsum;
    std::sort(sorted.begin(), sorted.end());
    const double median = sorted[cols / 2];
    const double peak = sorted.back();
    CHECK(peak > 2.0 * median);
  }
}

TEST_CASE("noise event is broadband without a dominant narrow ridge") {
  hfo::Rng rng = hfo::Rng::stream(3, "noise");
  auto w = hfo::generate_event_waveform(EventClass::kNoise, 2000.0, rng);
  CHECK(w.size() > 0);
  double rms = 0.0;
  for (double v : w) rms += v * v;
  CHECK(std::sqrt(rms / double(w.size())) == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("unit rms contract for burst generators") {
  for (auto cls : {EventClass::kPathological, EventClass::kPhysiological, EventClass::kNoise}) {
    hfo::Rng rng = hfo::Rng::stream(9, "rms", int(cls));
    auto w = hfo::generate_event_waveform(cls, 2000.0, rng);
    double rms = 0.0;
    for (double v : w) rms += v * v;
    rms = std::sqrt(rms / double(w.size()));
    CHECK(rms == doctest::Approx(1.0).epsilon(0.05));
  }
}

TEST_CASE("default mix counts 4000 events 1200 pathological") {
  SynthConfig cfg;
  cfg.n_subjects = 20;
  cfg.events_per_subject = 200;
  cfg.class_mix = {0.3, 0.4, 0.3};
  cfg.seed = 5;
  auto ds = hfo::generate_dataset(cfg);
  CHECK(ds.manifest.events.size() == 4000);
  int pathological = 0;
  for (const auto& [id, cls] : ds.true_class) {
    pathological += cls == EventClass::kPathological;
  }
  CHECK(pathological == 1200);
}

TEST_CASE("full coverage puts no pathological event in preserved channels") {
  SynthConfig cfg;
  cfg.n_subjects = 6;
  cfg.events_per_subject = 50;
  cfg.resection_coverage = 1.0;
  cfg.seed = 8;
  auto ds = hfo::generate_dataset(cfg);
  std::map<std::string, const hfo::SubjectRecord*> subj;
  for (const auto& s : ds.manifest.subjects) subj[s.id] = &s;
  for (const auto& ev : ds.manifest.events) {
    const auto* s = subj.at(ev.subject);
    if (s->outcome != hfo::Outcome::kSeizureFree) continue;
    if (ds.true_class.at(ev.id()) != EventClass::kPathological) continue;
    CHECK(s->resected_channels.count(ev.channel) == 1);
  }
}

TEST_CASE("same seed twice gives bit-identical waveforms") {
  SynthConfig cfg;
  cfg.n_subjects = 3;
  cfg.events_per_subject = 20;
  cfg.seed = 13;
  auto a = hfo::generate_dataset(cfg);
  auto b = hfo::generate_dataset(cfg);
  REQUIRE(a.recordings.size() == b.recordings.size());
  for (const auto& [key, rec] : a.recordings) {
    const auto& other = b.recordings.at(key);
    REQUIRE(rec.samples.size() == other.samples.size());
    for (std::size_t i = 0; i < rec.samples.size(); ++i) {
      CHECK(rec.samples[i] == other.samples[i]);
    }
  }
}

TEST_CASE("written dataset loads back through the manifest") {
  TempDir tmp;
  SynthConfig cfg;
  cfg.n_subjects = 3;
  cfg.events_per_subject = 15;
  cfg.seed = 21;
  auto ds = hfo::generate_dataset(cfg);
  auto manifest_path = hfo::write_synth_dataset(tmp.path, ds);
  auto m = hfo::load_manifest(manifest_path);
  CHECK(m.subjects.size() == 3);
  CHECK(m.events.size() == ds.manifest.events.size());
  auto gt = hfo::load_ground_truth(tmp.path / "ground_truth.csv");
  CHECK(gt.size() == ds.true_class.size());
  for (const auto& ev : m.events) CHECK(gt.count(ev.id()) == 1);
}

TEST_CASE("minus infinity snr leaves only the noise floor") {
  SynthConfig cfg;
  cfg.n_subjects = 2;
  cfg.events_per_subject = 20;
  cfg.snr_db = -INFINITY;
  cfg.seed = 4;
  auto ds = hfo::generate_dataset(cfg);
  for (const auto& ev : ds.manifest.events) {
    const auto& rec = ds.recordings.at({ev.subject, ev.channel});
    const double fs = double(rec.sample_rate);
    // pink noise wanders at low frequencies, so raw window RMS is not
    // stationary; first differences are, and bursts would inflate them
    auto diff_rms = [&](std::size_t lo, std::size_t hi) {
      double acc = 0.0;
      for (std::size_t i = lo; i + 1 < hi; ++i) {
        const double d = double(rec.samples[i + 1]) - double(rec.samples[i]);
        acc += d * d;
      }
      return std::sqrt(acc / double(hi - lo - 1));
    };
    const auto s0 = std::size_t(ev.start_ms * fs / 1000.0);
    const auto s1 = std::min(rec.samples.size(), std::size_t(ev.end_ms * fs / 1000.0));
    REQUIRE(s1 > s0 + 1);
    const double inside = diff_rms(s0, s1);
    const double whole = diff_rms(0, rec.samples.size());
    CHECK(inside / whole > 0.4);
    CHECK(inside / whole < 2.5);
  }
}

TEST_CASE("class mix must sum to one") {
  SynthConfig cfg;
  cfg.class_mix = {0.5, 0.4, 0.3};
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("every subject has an outcome and resected channels") {
  SynthConfig cfg;
  cfg.n_subjects = 5;
  cfg.events_per_subject = 10;
  cfg.seed = 2;
  auto ds = hfo::generate_dataset(cfg);
  for (const auto& s : ds.manifest.subjects) {
    CHECK(s.outcome != hfo::Outcome::kUnknown);
    CHECK(!s.resected_channels.empty());
    CHECK(int(s.resected_channels.size()) < cfg.channels_per_subject);
  }
}
