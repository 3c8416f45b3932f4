#include <doctest.h>

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "hfo/common.hpp"
#include "hfo/dataset.hpp"
#include "hfo/types.hpp"

namespace fs = std::filesystem;
using hfo::DatasetManifest;
using hfo::HfoEvent;
using hfo::Recording;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("hfo_test_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

DatasetManifest subjects_only(int n) {
  DatasetManifest m;
  for (int i = 0; i < n; ++i) {
    hfo::SubjectRecord s;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "s%03d", i);
    s.id = buf;
    s.institution = "inst" + std::to_string(i % 3);
    m.subjects.push_back(s);
  }
  return m;
}

}  // namespace

TEST_CASE("event csv round trip preserves order and values") {
  TempDir tmp;
  std::vector<HfoEvent> events;
  events.push_back({"s1", "ch3", 100.0, 150.0, "STE"});
  events.push_back({"s1", "ch1", 20.5, 60.25, "MNI"});
  hfo::save_events(tmp.path / "e.csv", events);
  auto loaded = hfo::load_events(tmp.path / "e.csv", "s1");
  REQUIRE(loaded.size() == 2);
  // returned sorted by (channel, start)
  CHECK(loaded[0].channel == "ch1");
  CHECK(loaded[0].start_ms == 20.5);
  CHECK(loaded[0].end_ms == 60.25);
  CHECK(loaded[0].detector == "MNI");
  CHECK(loaded[1].channel == "ch3");
  CHECK(loaded[1].start_ms == 100.0);
}

TEST_CASE("load save load is identical") {
  TempDir tmp;
  std::vector<HfoEvent> events;
  events.push_back({"s1", "chA", 5.0, 10.0, "STE"});
  events.push_back({"s1", "chA", 15.0, 30.0, "STE"});
  hfo::save_events(tmp.path / "a.csv", events);
  auto once = hfo::load_events(tmp.path / "a.csv", "s1");
  hfo::save_events(tmp.path / "b.csv", once);
  auto twice = hfo::load_events(tmp.path / "b.csv", "s1");
  REQUIRE(once.size() == twice.size());
  for (std::size_t i = 0; i < once.size(); ++i) {
    CHECK(once[i].id() == twice[i].id());
  }
}

TEST_CASE("non positive length event rejected at load") {
  TempDir tmp;
  std::ofstream(tmp.path / "bad.csv")
      << "subject,channel,start_ms,end_ms,detector\ns1,ch1,50,50,STE\n";
  CHECK_THROWS_AS(hfo::load_events(tmp.path / "bad.csv", "s1"), hfo::ValidationError);
}

TEST_CASE("waveform round trip") {
  TempDir tmp;
  std::vector<float> samples = {0.0f, 1.5f, -2.25f, 100.0f};
  hfo::save_waveform(tmp.path / "w.hfow", 2000, samples);
  auto w = hfo::load_waveform(tmp.path / "w.hfow");
  CHECK(w.sample_rate == 2000);
  REQUIRE(w.samples.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(w.samples[i] == samples[i]);
}

TEST_CASE("manifest referencing absent waveform names the subject and channel") {
  TempDir tmp;
  std::ofstream(tmp.path / "events.csv")
      << "subject,channel,start_ms,end_ms,detector\ns9,ch1,10,20,STE\n";
  std::ofstream(tmp.path / "manifest.json") << R"({
    "subjects": [{"id": "s9", "institution": "i0", "outcome": "unknown",
                  "resected_channels": []}],
    "events": {"s9": "events.csv"},
    "waveforms": {"s9": {"ch1": "missing.hfow"}}
  })";
  try {
    hfo::load_manifest(tmp.path / "manifest.json");
    FAIL("expected ValidationError");
  } catch (const hfo::ValidationError& e) {
    std::string msg = e.what();
    CHECK(msg.find("s9") != std::string::npos);
    CHECK(msg.find("ch1") != std::string::npos);
  }
}

TEST_CASE("empty subject list is a valid manifest") {
  TempDir tmp;
  std::ofstream(tmp.path / "manifest.json")
      << R"({"subjects": [], "events": {}, "waveforms": {}})";
  auto m = hfo::load_manifest(tmp.path / "manifest.json");
  CHECK(m.subjects.empty());
  CHECK(m.events.empty());
}

TEST_CASE("window length is 2 * round(half window in samples)") {
  Recording rec;
  rec.subject = "s1";
  rec.channel = "ch1";
  rec.sample_rate = 2000;
  rec.samples.assign(4000, 1.0f);
  HfoEvent ev{"s1", "ch1", 900.0, 1100.0, "STE"};
  auto w = hfo::extract_window(rec, ev, 570.0);
  CHECK(w.samples.size() == 1140);  // 0.570 s * 2000 Hz
  CHECK(w.center_ms == 1000.0);
  CHECK(w.center_index == 2000);
}

TEST_CASE("window at recording start is left half zeros") {
  Recording rec;
  rec.subject = "s1";
  rec.channel = "ch1";
  rec.sample_rate = 1000;
  rec.samples.assign(5000, 2.0f);
  HfoEvent ev{"s1", "ch1", -1.0, 1.0, "STE"};  // midpoint at sample 0
  auto w = hfo::extract_window(rec, ev, 100.0);
  REQUIRE(w.samples.size() == 100);
  for (std::size_t i = 0; i < 50; ++i) CHECK(w.samples[i] == 0.0);
  for (std::size_t i = 50; i < 100; ++i) CHECK(w.samples[i] == 2.0);
}

TEST_CASE("midpoint of 100 to 150 ms is 125 ms") {
  Recording rec;
  rec.subject = "s1";
  rec.channel = "ch1";
  rec.sample_rate = 2000;
  rec.samples.assign(1000, 0.0f);
  HfoEvent ev{"s1", "ch1", 100.0, 150.0, "STE"};
  auto w = hfo::extract_window(rec, ev, 50.0);
  CHECK(w.center_ms == 125.0);
  CHECK(w.center_index == 250);
}

TEST_CASE("185 subjects with k 5 reproduces a 119/30/36 fold") {
  auto m = subjects_only(185);  // strata 62/62/61; remainders land on low folds
  auto folds = hfo::make_folds(m, 5, 11);
  REQUIRE(folds.size() == 5);
  std::set<std::string> all_test;
  std::size_t total = 0;
  bool has_pinned_split = false;
  for (const auto& f : folds) {
    total += f.test.size();
    for (const auto& s : f.test) all_test.insert(s);
    std::set<std::string> train(f.train.begin(), f.train.end());
    for (const auto& s : f.test) CHECK(train.count(s) == 0);
    for (const auto& s : f.val) CHECK(train.count(s) == 0);
    CHECK(f.train.size() + f.val.size() + f.test.size() == 185);
    if (f.train.size() == 119 && f.val.size() == 30 && f.test.size() == 36) {
      has_pinned_split = true;
    }
  }
  CHECK(all_test.size() == 185);
  CHECK(total == 185);
  CHECK(has_pinned_split);
}

TEST_CASE("five subjects of one institution give singleton test sets") {
  DatasetManifest m;
  for (int i = 0; i < 5; ++i) {
    hfo::SubjectRecord s;
    s.id = "s" + std::to_string(i);
    s.institution = "inst0";
    m.subjects.push_back(s);
  }
  auto folds = hfo::make_folds(m, 5, 1);
  REQUIRE(folds.size() == 5);
  for (const auto& f : folds) CHECK(f.test.size() == 1);
}

TEST_CASE("small strata deal each institution from fold zero") {
  // strata {s000,s003}, {s001,s004}, {s002}: low folds absorb the remainders
  auto m = subjects_only(5);
  auto folds = hfo::make_folds(m, 5, 1);
  REQUIRE(folds.size() == 5);
  std::vector<std::size_t> sizes;
  for (const auto& f : folds) sizes.push_back(f.test.size());
  CHECK(sizes == std::vector<std::size_t>{3, 2, 0, 0, 0});
}

TEST_CASE("same seed twice gives identical folds") {
  auto m = subjects_only(20);
  auto a = hfo::make_folds(m, 4, 9);
  auto b = hfo::make_folds(m, 4, 9);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].train == b[i].train);
    CHECK(a[i].val == b[i].val);
    CHECK(a[i].test == b[i].test);
  }
}

TEST_CASE("more folds than subjects rejected") {
  auto m = subjects_only(3);
  CHECK_THROWS_AS(hfo::make_folds(m, 5, 1), hfo::ValidationError);
  CHECK_THROWS_AS(hfo::make_folds(m, 1, 1), hfo::ValidationError);
}

TEST_CASE("event id is canonical") {
  HfoEvent a{"s1", "ch2", 10.5, 20.0, "STE"};
  HfoEvent b{"s1", "ch2", 10.5, 20.0, "MNI"};
  CHECK(a.id() == b.id());  // detector does not change identity
  HfoEvent c{"s1", "ch2", 10.25, 20.0, "STE"};
  CHECK(a.id() != c.id());
}

TEST_CASE("event ordering is subject channel start") {
  HfoEvent a{"s1", "ch1", 50.0, 60.0, ""};
  HfoEvent b{"s1", "ch2", 10.0, 20.0, ""};
  HfoEvent c{"s2", "ch0", 0.0, 5.0, ""};
  CHECK(hfo::event_order_less(a, b));
  CHECK(hfo::event_order_less(b, c));
  CHECK_FALSE(hfo::event_order_less(c, a));
}
