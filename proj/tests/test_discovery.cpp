#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "hfo/common.hpp"
#include "hfo/discovery.hpp"
#include "hfo/rng.hpp"
#include "hfo/tensor.hpp"

namespace fs = std::filesystem;
using hfo::DiscoveryInput;
using hfo::HfoEvent;
using hfo::Tensor;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int c = 0;
    path = fs::temp_directory_path() /
           ("hfo_disc_" + std::to_string(::getpid()) + "_" + std::to_string(c++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<uint64_t> hash_ids(const std::vector<HfoEvent>& events) {
  std::vector<uint64_t> ids;
  for (const auto& e : events) ids.push_back(hfo::Rng::hash_str(e.id()));
  return ids;
}

// three latent blobs: noise around (8,8), physiological (0,0), pathological (4,-4)
DiscoveryInput planted_input(int per_class, uint64_t seed, double frac_path_resected = 0.9,
                             double frac_phys_resected = 0.1) {
  DiscoveryInput in;
  hfo::Rng rng = hfo::Rng::stream(seed, "plant");
  const int n = 3 * per_class;
  in.mu = Tensor({std::size_t(n), 2});
  int row = 0;
  auto add = [&](int cls, int i) {
    const double cx = cls == 0 ? 8.0 : (cls == 1 ? 0.0 : 4.0);
    const double cy = cls == 0 ? 8.0 : (cls == 1 ? 0.0 : -4.0);
    in.mu[std::size_t(row) * 2 + 0] = cx + 0.3 * rng.normal();
    in.mu[std::size_t(row) * 2 + 1] = cy + 0.3 * rng.normal();
    // noise reconstructs worst
    in.recon_losses.push_back(cls == 0 ? 5.0 + rng.uniform() : 1.0 + rng.uniform());
    HfoEvent ev{"s" + std::to_string(i % 4), "ch" + std::to_string(row), double(10 * row),
                double(10 * row + 5), "STE"};
    in.events.push_back(ev);
    in.annotated.push_back(1);
    const double p = cls == 2 ? frac_path_resected : (cls == 1 ? frac_phys_resected : 0.5);
    in.resected.push_back(rng.uniform() < p ? 1 : 0);
    ++row;
  };
  for (int i = 0; i < per_class; ++i) add(0, i);
  for (int i = 0; i < per_class; ++i) add(1, i);
  for (int i = 0; i < per_class; ++i) add(2, i);
  return in;
}

}  // namespace

TEST_CASE("background split flags the high loss cluster as noise") {
  auto in = planted_input(30, 1);
  auto split = hfo::split_background(in.mu, in.recon_losses, hash_ids(in.events), 3);
  CHECK(split.noise_cluster >= 0);
  CHECK_FALSE(split.tie);
  // rows 0..29 are the planted noise blob
  int correct = 0;
  for (std::size_t r : split.noise_idx) correct += r < 30;
  CHECK(double(correct) / double(split.noise_idx.size()) >= 0.9);
  CHECK(split.noise_idx.size() + split.hfo_idx.size() == 90);
}

TEST_CASE("equal losses tie break to the smaller cluster") {
  // 2 points far left, 4 far right, all same recon loss
  Tensor mu({6, 1}, {-10.0, -10.1, 10.0, 10.1, 10.2, 10.3});
  std::vector<double> losses(6, 2.0);
  std::vector<uint64_t> ids = {1, 2, 3, 4, 5, 6};
  auto split = hfo::split_background(mu, losses, ids, 5);
  CHECK(split.tie);
  CHECK(split.noise_idx.size() == 2);  // smaller side is noise
}

TEST_CASE("pathological split picks the higher resected fraction") {
  // cluster A at 0 fully resected, cluster B at 10 fully preserved
  Tensor mu({6, 1}, {0.0, 0.1, -0.1, 10.0, 10.1, 9.9});
  std::vector<char> resected = {1, 1, 1, 0, 0, 0};
  std::vector<double> losses(6, 1.0);
  std::vector<uint64_t> ids = {1, 2, 3, 4, 5, 6};
  auto split = hfo::split_pathological(mu, resected, losses, ids, 7);
  REQUIRE(split.pathological_cluster >= 0);
  const int pc = split.pathological_cluster;
  CHECK(split.resected_fraction[std::size_t(pc)] == doctest::Approx(1.0));
  CHECK(split.resected_fraction[std::size_t(1 - pc)] == doctest::Approx(0.0));
  CHECK_FALSE(split.tie);
}

TEST_CASE("sixty forty fractions choose the sixty cluster") {
  // cluster A: 5 points, 3 resected (0.6); cluster B: 5 points, 2 resected (0.4)
  Tensor mu({10, 1}, {0, 0.1, -0.1, 0.05, -0.05, 10, 10.1, 9.9, 10.05, 9.95});
  std::vector<char> resected = {1, 1, 1, 0, 0, 1, 1, 0, 0, 0};
  std::vector<double> losses(10, 1.0);
  std::vector<uint64_t> ids = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  auto split = hfo::split_pathological(mu, resected, losses, ids, 9);
  const int pc = split.pathological_cluster;
  CHECK(split.resected_fraction[std::size_t(pc)] == doctest::Approx(0.6));
}

TEST_CASE("fraction tie breaks to higher mean loss with a note") {
  Tensor mu({4, 1}, {0.0, 0.1, 10.0, 10.1});
  std::vector<char> resected = {1, 0, 1, 0};  // both clusters 0.5
  std::vector<double> losses = {5.0, 5.0, 1.0, 1.0};
  std::vector<uint64_t> ids = {1, 2, 3, 4};
  auto split = hfo::split_pathological(mu, resected, losses, ids, 11);
  CHECK(split.tie);
  CHECK_FALSE(split.note.empty());
  // higher-loss cluster holds rows 0,1
  const int pc = split.pathological_cluster;
  int members = 0;
  for (std::size_t i = 0; i < 4; ++i) members += split.model.assignment[i] == pc && i < 2;
  CHECK(members == 2);
}

TEST_CASE("full discovery recovers planted labels") {
  auto in = planted_input(40, 5);
  auto res = hfo::discover(in, 13);
  REQUIRE(res.labels.size() == in.events.size());
  int noise_hits = 0, path_hits = 0, phys_hits = 0;
  for (std::size_t i = 0; i < res.labels.size(); ++i) {
    const auto& lab = res.labels[i];
    CHECK((lab.l == 1) == (lab.stage_tag == "pathological"));
    if (i < 40) noise_hits += lab.stage_tag == "noise";
    else if (i < 80) phys_hits += lab.stage_tag == "physiological";
    else path_hits += lab.stage_tag == "pathological";
  }
  CHECK(noise_hits >= 36);
  CHECK(phys_hits >= 34);
  CHECK(path_hits >= 34);
}

TEST_CASE("unannotated events inherit the nearest stage two centroid") {
  auto in = planted_input(20, 7);
  // strip annotation from the last pathological-blob event
  in.annotated.back() = 0;
  in.resected.back() = 0;
  auto res = hfo::discover(in, 17);
  CHECK(res.labels.back().stage_tag == "pathological");
}

TEST_CASE("discovery needs at least two annotated hfo events") {
  DiscoveryInput in;
  in.mu = Tensor({2, 1}, {0.0, 1.0});
  in.events.push_back({"s0", "ch0", 0.0, 5.0, "STE"});
  in.events.push_back({"s0", "ch1", 0.0, 5.0, "STE"});
  in.recon_losses = {1.0, 2.0};
  in.annotated = {0, 0};
  in.resected = {0, 0};
  CHECK_THROWS_AS(hfo::discover(in, 1), hfo::ValidationError);
}

TEST_CASE("weak labels round trip through csv") {
  TempDir tmp;
  auto in = planted_input(10, 9);
  auto res = hfo::discover(in, 19);
  hfo::save_weak_labels(tmp.path / "wl.csv", res.labels);
  auto loaded = hfo::load_weak_labels(tmp.path / "wl.csv");
  REQUIRE(loaded.size() == res.labels.size());
  // files sort canonically; compare as sets keyed by event id
  std::map<std::string, std::pair<std::string, int>> by_id;
  for (const auto& l : res.labels) by_id[l.event.id()] = {l.stage_tag, l.l};
  for (const auto& l : loaded) {
    REQUIRE(by_id.count(l.event.id()) == 1);
    CHECK(by_id[l.event.id()].first == l.stage_tag);
    CHECK(by_id[l.event.id()].second == l.l);
  }
}

TEST_CASE("bad stage tag rejected at load") {
  TempDir tmp;
  std::ofstream(tmp.path / "bad.csv") << "subject,channel,start_ms,end_ms,stage_tag,l\n"
                                      << "s0,ch0,0,5,garbage,0\n";
  CHECK_THROWS_AS(hfo::load_weak_labels(tmp.path / "bad.csv"), hfo::ValidationError);
}

TEST_CASE("label flag must match the pathological tag") {
  TempDir tmp;
  std::ofstream(tmp.path / "bad.csv") << "subject,channel,start_ms,end_ms,stage_tag,l\n"
                                      << "s0,ch0,0,5,noise,1\n";
  CHECK_THROWS_AS(hfo::load_weak_labels(tmp.path / "bad.csv"), hfo::ValidationError);
}
