#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "hfo/checkpoint.hpp"
#include "hfo/common.hpp"
#include "hfo/csvio.hpp"
#include "hfo/gradcheck.hpp"
#include "hfo/rng.hpp"
#include "hfo/vae.hpp"

namespace fs = std::filesystem;
using hfo::EventImageSet;
using hfo::FeatureExtractor;
using hfo::Graph;
using hfo::Tensor;
using hfo::Vae;
using hfo::VaeConfig;
using hfo::Var;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int c = 0;
    path = fs::temp_directory_path() /
           ("hfo_vae_" + std::to_string(::getpid()) + "_" + std::to_string(c++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

VaeConfig toy_config() {
  VaeConfig cfg;
  cfg.latent_dim = 3;
  cfg.image = 8;
  cfg.channels = {4, 8};
  cfg.seed = 5;
  cfg.fx_kind = "identity";
  return cfg;
}

Tensor random_images(std::size_t n, int side, uint64_t seed) {
  hfo::Rng rng = hfo::Rng::stream(seed, "img");
  Tensor t({n, 1, std::size_t(side), std::size_t(side)});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform();
  return t;
}

EventImageSet toy_set(int per_subject, int subjects, int side, uint64_t seed) {
  EventImageSet set;
  hfo::Rng rng = hfo::Rng::stream(seed, "set");
  for (int s = 0; s < subjects; ++s) {
    const std::string id = "s" + std::to_string(s);
    for (int e = 0; e < per_subject; ++e) {
      hfo::HfoEvent ev{id, "ch0", double(100 * e), double(100 * e + 50), "STE"};
      Tensor img({std::size_t(side), std::size_t(side)});
      for (std::size_t i = 0; i < img.size(); ++i) img[i] = rng.uniform();
      set.by_subject[id].push_back(set.events.size());
      set.events.push_back(ev);
      set.images.push_back(img);
    }
  }
  return set;
}

}  // namespace

TEST_CASE("beta update follows the loss gap") {
  hfo::BetaState s{0.5, 0.1};
  auto next = hfo::update_beta(s, 1.0, 3.0);
  CHECK(next.beta == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("beta stays clamped at one when kl dominates") {
  hfo::BetaState s{1.0, 1e-4};
  auto next = hfo::update_beta(s, 10.0, 1.0);
  CHECK(next.beta == 1.0);
}

TEST_CASE("beta clamps at zero") {
  hfo::BetaState s{0.01, 0.5};
  auto next = hfo::update_beta(s, 0.0, 1.0);
  CHECK(next.beta == 0.0);
}

TEST_CASE("equal losses leave beta unchanged") {
  hfo::BetaState s{0.42, 0.1};
  auto next = hfo::update_beta(s, 2.0, 2.0);
  CHECK(next.beta == doctest::Approx(0.42));
}

TEST_CASE("beta trajectory converges to the boundary given constant losses") {
  hfo::BetaState s{0.5, 0.05};
  for (int i = 0; i < 1000; ++i) s = hfo::update_beta(s, 2.0, 1.0);  // kl > perc
  CHECK(s.beta == 1.0);
  s = {0.5, 0.05};
  for (int i = 0; i < 1000; ++i) s = hfo::update_beta(s, 1.0, 2.0);  // kl < perc
  CHECK(s.beta == 0.0);
}

TEST_CASE("kl of the standard normal is zero") {
  Graph g;
  Var mu = g.input(Tensor::zeros({4, 3}), false);
  Var logvar = g.input(Tensor::zeros({4, 3}), false);
  Var kl = hfo::kl_loss(g, mu, logvar);
  CHECK(g.val(kl)[0] == 0.0);
}

TEST_CASE("kl closed form on a one dim example") {
  // mu=1, logvar=0 -> 0.5*(1 + 1 - 0 - 1) = 0.5
  Graph g;
  Var mu = g.input(Tensor({1, 1}, {1.0}), false);
  Var logvar = g.input(Tensor::zeros({1, 1}), false);
  Var kl = hfo::kl_loss(g, mu, logvar);
  CHECK(g.val(kl)[0] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("kl matches a monte carlo estimate within two percent") {
  const double mu = 0.7, logvar = -0.4;
  Graph g;
  Var vmu = g.input(Tensor({1, 1}, {mu}), false);
  Var vlv = g.input(Tensor({1, 1}, {logvar}), false);
  double closed = g.val(hfo::kl_loss(g, vmu, vlv))[0];

  // E_q[log q(z) - log p(z)] by sampling z ~ q
  hfo::Rng rng = hfo::Rng::stream(11, "mc");
  const int n = 100000;
  const double sigma = std::exp(0.5 * logvar);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = mu + sigma * rng.normal();
    const double logq =
        -0.5 * std::log(2.0 * M_PI) - 0.5 * logvar - 0.5 * (z - mu) * (z - mu) / (sigma * sigma);
    const double logp = -0.5 * std::log(2.0 * M_PI) - 0.5 * z * z;
    acc += logq - logp;
  }
  const double mc = acc / n;
  CHECK(std::abs(closed - mc) / std::abs(closed) < 0.02);
}

TEST_CASE("kl averages over the batch") {
  Graph g;
  Tensor mu({2, 1}, {1.0, 0.0});
  Var vmu = g.input(mu, false);
  Var vlv = g.input(Tensor::zeros({2, 1}), false);
  // per-row kl = {0.5, 0}; batch mean 0.25
  CHECK(g.val(hfo::kl_loss(g, vmu, vlv))[0] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("pretrain loss blends at the given beta") {
  Graph g;
  Var p = g.input(Tensor::scalar(2.0), false);
  Var k = g.input(Tensor::scalar(4.0), false);
  CHECK(g.val(hfo::pretrain_loss(g, p, k, 0.3))[0] == doctest::Approx(2.6).epsilon(1e-12));
  CHECK(g.val(hfo::pretrain_loss(g, p, k, 0.0))[0] == doctest::Approx(2.0));
  CHECK(g.val(hfo::pretrain_loss(g, p, k, 1.0))[0] == doctest::Approx(4.0));
}

TEST_CASE("identity extractor reduces the perceptual loss to mse") {
  FeatureExtractor fx = FeatureExtractor::identity();
  Graph g;
  Tensor a = random_images(2, 8, 1);
  Tensor b = random_images(2, 8, 2);
  Var va = g.input(a, false);
  Var vb = g.input(b, false);
  double mse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mse += (a[i] - b[i]) * (a[i] - b[i]);
  mse /= double(a.size());
  CHECK(g.val(hfo::perceptual_loss(g, fx, va, vb))[0] == doctest::Approx(mse).epsilon(1e-12));
}

TEST_CASE("perceptual loss is zero on identical inputs and symmetric") {
  FeatureExtractor fx = FeatureExtractor::random(3);
  Graph g;
  Tensor a = random_images(2, 8, 3);
  Tensor b = random_images(2, 8, 4);
  Var va = g.input(a, false);
  Var vb = g.input(b, false);
  CHECK(g.val(hfo::perceptual_loss(g, fx, va, va))[0] == 0.0);
  double ab = g.val(hfo::perceptual_loss(g, fx, va, vb))[0];
  double ba = g.val(hfo::perceptual_loss(g, fx, vb, va))[0];
  CHECK(ab == doctest::Approx(ba).epsilon(1e-12));
  CHECK(ab > 0.0);
}

TEST_CASE("random extractor is reproducible per seed") {
  FeatureExtractor a = FeatureExtractor::random(10);
  FeatureExtractor b = FeatureExtractor::random(10);
  REQUIRE(a.weights.size() == b.weights.size());
  for (std::size_t i = 0; i < a.weights.size(); ++i) {
    for (std::size_t j = 0; j < a.weights[i].size(); ++j) {
      CHECK(a.weights[i][j] == b.weights[i][j]);
    }
  }
  FeatureExtractor c = FeatureExtractor::random(11);
  CHECK(a.weights[0][0] != c.weights[0][0]);
}

TEST_CASE("reparameterize at the logvar floor collapses to mu") {
  Graph g;
  Tensor mu({1, 3}, {0.2, -0.4, 0.9});
  Var vmu = g.input(mu, false);
  Var vlv = g.input(Tensor::full({1, 3}, -10.0), false);
  Tensor eps({1, 3}, {1.0, -1.0, 2.0});
  Var z = hfo::reparameterize(g, vmu, vlv, g.input(eps, false));
  for (std::size_t i = 0; i < 3; ++i) {
    // |eps| = 2 at the clamp floor sits exactly on the bound
    CHECK(std::abs(g.val(z)[i] - mu[i]) <= 2.0 * std::exp(-5.0));
  }
}

TEST_CASE("reparameterize moments over many draws") {
  Graph g;
  const int n = 100000;
  Var vmu = g.input(Tensor::zeros({std::size_t(n), 1}), false);
  Var vlv = g.input(Tensor::zeros({std::size_t(n), 1}), false);
  hfo::Rng rng = hfo::Rng::stream(21, "eps");
  Tensor eps({std::size_t(n), 1});
  for (int i = 0; i < n; ++i) eps[i] = rng.normal();
  Var z = hfo::reparameterize(g, vmu, vlv, g.input(eps, false));
  const Tensor& zv = g.val(z);
  double mean = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    mean += zv[i];
    sq += zv[i] * zv[i];
  }
  mean /= n;
  const double var = sq / n - mean * mean;
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(var - 1.0) < 0.03);
}

TEST_CASE("encode produces latent sized mu and logvar deterministically") {
  VaeConfig cfg = toy_config();
  Vae vae = Vae::init(cfg);
  Tensor batch = random_images(2, cfg.image, 7);
  Tensor mu1 = vae.encode_mu(batch);
  Tensor mu2 = vae.encode_mu(batch);
  REQUIRE(mu1.shape() == std::vector<std::size_t>{2, 3});
  for (std::size_t i = 0; i < mu1.size(); ++i) CHECK(mu1[i] == mu2[i]);
}

TEST_CASE("zero heads map any image to the zero latent at init") {
  VaeConfig cfg = toy_config();
  Vae vae = Vae::init(cfg);
  Tensor batch = random_images(3, cfg.image, 8);
  auto [mu, logvar] = vae.encode_dist(batch);
  for (std::size_t i = 0; i < mu.size(); ++i) {
    CHECK(mu[i] == 0.0);
    CHECK(logvar[i] == 0.0);
  }
}

TEST_CASE("decode stays in the unit interval and is deterministic") {
  VaeConfig cfg = toy_config();
  Vae vae = Vae::init(cfg);
  hfo::Rng rng = hfo::Rng::stream(31, "z");
  Tensor z({2, 3});
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = rng.normal();
  Tensor a = vae.decode_batch(z);
  Tensor b = vae.decode_batch(z);
  REQUIRE(a.shape() == std::vector<std::size_t>{2, 1, 8, 8});
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i] >= 0.0);
    CHECK(a[i] <= 1.0);
    CHECK(a[i] == b[i]);
  }
}

TEST_CASE("decoder gradient with respect to z passes a finite difference check") {
  VaeConfig cfg = toy_config();
  Vae vae = Vae::init(cfg);
  // perturb the zero-init decoder so the gradient is not trivially flat
  hfo::Rng rng = hfo::Rng::stream(17, "perturb");
  for (const std::string& name : vae.names()) {
    Tensor& t = vae.tensor(name);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += 0.05 * rng.normal();
  }
  Tensor z({1, 3}, {0.3, -0.2, 0.5});

  Graph g;
  auto b = vae.bind(g, false);
  Var vz = g.input(z, true);
  Var out = g.mean(vae.decode(g, b, vz));
  g.backward(out);

  auto f = [&]() {
    Graph h;
    auto hb = vae.bind(h, false);
    Var hz = h.input(z, false);
    return h.val(h.mean(vae.decode(h, hb, hz)))[0];
  };
  CHECK(hfo::grad_check(f, {&z}, {&g.grad(vz)}) < 1e-6);
}

TEST_CASE("full pretrain loss gradient on the toy architecture") {
  VaeConfig cfg = toy_config();
  cfg.latent_dim = 2;
  cfg.image = 4;
  cfg.channels = {3};
  Vae vae = Vae::init(cfg);
  hfo::Rng rng = hfo::Rng::stream(19, "perturb");
  for (const std::string& name : vae.names()) {
    Tensor& t = vae.tensor(name);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += 0.1 * rng.normal();
  }
  FeatureExtractor fx = FeatureExtractor::identity();
  Tensor x = random_images(2, 4, 23);
  Tensor eps({2, 2});
  for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = rng.normal();
  const double beta = 0.4;

  auto build_loss = [&](Graph& g, const Vae::Bound& b) {
    Var vx = g.input(x, false);
    auto [mu, logvar] = vae.encode(g, b, vx);
    Var z = hfo::reparameterize(g, mu, logvar, g.input(eps, false));
    Var xhat = vae.decode(g, b, z);
    return hfo::pretrain_loss(g, hfo::perceptual_loss(g, fx, vx, xhat),
                              hfo::kl_loss(g, mu, logvar), beta);
  };

  Graph g;
  auto b = vae.bind(g, true);
  g.backward(build_loss(g, b));

  std::vector<Tensor*> params = vae.params();
  std::vector<const Tensor*> grads;
  for (Var v : b.vars) grads.push_back(&g.grad(v));

  auto f = [&]() {
    Graph h;
    auto hb = vae.bind(h, false);
    return h.val(build_loss(h, hb))[0];
  };
  CHECK(hfo::grad_check(f, params, grads, 1e-5, 10) < 1e-4);
}

TEST_CASE("checkpoint round trip reproduces encode exactly") {
  TempDir tmp;
  VaeConfig cfg = toy_config();
  Vae vae = Vae::init(cfg);
  hfo::Rng rng = hfo::Rng::stream(41, "perturb");
  for (const std::string& name : vae.names()) {
    Tensor& t = vae.tensor(name);
    for (std::size_t i = 0; i < t.size(); ++i) {
      t[i] = double(float(t[i] + 0.1 * rng.normal()));  // float32-representable
    }
  }
  Tensor batch = random_images(2, cfg.image, 9);
  Tensor before = vae.encode_mu(batch);

  hfo::save_checkpoint(tmp.path / "v.ckpt", vae.to_checkpoint(0.5, 3));
  Vae loaded = Vae::from_checkpoint(hfo::load_checkpoint(tmp.path / "v.ckpt"));
  Tensor after = loaded.encode_mu(batch);
  REQUIRE(before.size() == after.size());
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i] == after[i]);
}

TEST_CASE("pretrain runs, logs epochs, and halves the loss on easy data") {
  TempDir tmp;
  VaeConfig cfg = toy_config();
  cfg.epochs = 30;
  cfg.batch = 4;
  cfg.lr = 5e-3;
  cfg.beta_init = 0.05;  // a dominant kl term would stop perceptual progress
  cfg.beta_lr = 0.0;
  // constant-intensity images: reconstruction only has to pass one gray
  // level through the latent
  EventImageSet set;
  hfo::Rng rng = hfo::Rng::stream(33, "easy");
  for (int s = 0; s < 2; ++s) {
    const std::string id = "s" + std::to_string(s);
    for (int e = 0; e < 8; ++e) {
      hfo::HfoEvent ev{id, "ch0", double(100 * e), double(100 * e + 50), "STE"};
      Tensor img({std::size_t(cfg.image), std::size_t(cfg.image)});
      const double v = rng.uniform();
      for (std::size_t i = 0; i < img.size(); ++i) img[i] = v;
      set.by_subject[id].push_back(set.events.size());
      set.events.push_back(ev);
      set.images.push_back(img);
    }
  }
  auto result = hfo::pretrain(set, {"s0"}, {"s1"}, cfg, tmp.path / "v.ckpt",
                              tmp.path / "log.csv");
  REQUIRE(result.log.size() == 30);
  CHECK(fs::exists(tmp.path / "v.ckpt"));
  CHECK(fs::exists(tmp.path / "log.csv"));
  for (const auto& e : result.log) {
    CHECK(e.beta >= 0.0);
    CHECK(e.beta <= 1.0);
    CHECK(std::isfinite(e.val_perceptual));
  }
  CHECK(result.log.back().mean_perceptual < 0.5 * result.log.front().mean_perceptual);
}

TEST_CASE("subject cap limits per subject draws") {
  TempDir tmp;
  VaeConfig cfg = toy_config();
  cfg.epochs = 1;
  cfg.batch = 64;
  cfg.subject_cap = 5;
  EventImageSet set = toy_set(20, 2, cfg.image, 35);
  // 2 subjects, cap 5 -> 10 training rows; one epoch must see exactly 10
  auto result = hfo::pretrain(set, {"s0", "s1"}, {}, cfg, tmp.path / "v.ckpt",
                              tmp.path / "log.csv");
  CHECK(result.log.size() == 1);
  // indirect: losses finite, checkpoint written (row count is internal)
  CHECK(std::isfinite(result.log[0].mean_perceptual));
}

TEST_CASE("pretrain is deterministic in reference mode") {
  hfo::set_num_threads(1);
  TempDir tmp;
  VaeConfig cfg = toy_config();
  cfg.epochs = 3;
  cfg.batch = 8;
  EventImageSet set = toy_set(6, 2, cfg.image, 37);
  auto a = hfo::pretrain(set, {"s0"}, {"s1"}, cfg, tmp.path / "a.ckpt", tmp.path / "a.csv");
  auto b = hfo::pretrain(set, {"s0"}, {"s1"}, cfg, tmp.path / "b.ckpt", tmp.path / "b.csv");
  CHECK(hfo::param_hash(a.checkpoint) == hfo::param_hash(b.checkpoint));
  CHECK(hfo::read_file(tmp.path / "a.ckpt") == hfo::read_file(tmp.path / "b.ckpt"));
}

TEST_CASE("reconstruction loss is zero for a perfectly reconstructed event") {
  // an autoencoder that reproduces its input exactly does not exist here, so
  // check the definitional property instead: loss(x, x) = 0 via identity fx
  FeatureExtractor fx = FeatureExtractor::identity();
  Graph g;
  Tensor a = random_images(1, 8, 51);
  Var va = g.input(a, false);
  CHECK(g.val(hfo::perceptual_loss(g, fx, va, va))[0] == 0.0);
}

TEST_CASE("per event reconstruction loss is repeatable and aligned") {
  VaeConfig cfg = toy_config();
  Vae vae = Vae::init(cfg);
  FeatureExtractor fx = FeatureExtractor::identity();
  EventImageSet set = toy_set(5, 2, cfg.image, 53);
  auto a = hfo::per_event_reconstruction_loss(set, vae, fx, 4);
  auto b = hfo::per_event_reconstruction_loss(set, vae, fx, 3);
  REQUIRE(a.size() == set.size());
  REQUIRE(b.size() == set.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
    CHECK(a[i] >= 0.0);
  }
}

TEST_CASE("config validation rejects bad shapes") {
  VaeConfig cfg = toy_config();
  cfg.image = 10;  // not divisible by 2^stages
  CHECK_THROWS_AS(cfg.validate(), hfo::ValidationError);
  cfg = toy_config();
  cfg.channels = {};
  CHECK_THROWS_AS(cfg.validate(), hfo::ValidationError);
  cfg = toy_config();
  cfg.beta_init = 1.5;
  CHECK_THROWS_AS(cfg.validate(), hfo::ValidationError);
  cfg = toy_config();
  cfg.fx_kind = "bogus";
  CHECK_THROWS_AS(cfg.validate(), hfo::ValidationError);
}

TEST_CASE("batch assembly checks image sizes") {
  EventImageSet set = toy_set(2, 1, 8, 57);
  Tensor b = set.batch({0, 1});
  CHECK(b.shape() == std::vector<std::size_t>{2, 1, 8, 8});
  CHECK(b[0] == set.images[0][0]);
  set.images[1] = Tensor::zeros({4, 4});
  CHECK_THROWS(set.batch({0, 1}));
}
