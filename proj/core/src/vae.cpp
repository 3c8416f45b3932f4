#include "hfo/vae.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hfo/adam.hpp"
#include "hfo/common.hpp"
#include "hfo/csvio.hpp"

namespace hfo {

Tensor EventImageSet::batch(const std::vector<std::size_t>& idx) const {
  if (idx.empty()) throw ValidationError("empty batch");
  const std::size_t h = images[idx[0]].dim(0), w = images[idx[0]].dim(1);
  Tensor out({idx.size(), 1, h, w});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const Tensor& img = images[idx[i]];
    if (img.dim(0) != h || img.dim(1) != w) {
      throw ValidationError("inconsistent image sizes in batch");
    }
    std::copy(img.data(), img.data() + img.size(), out.data() + i * h * w);
  }
  return out;
}

void VaeConfig::validate() const {
  if (latent_dim < 1) throw ValidationError("latent_dim must be positive");
  if (channels.empty()) throw ValidationError("need at least one encoder stage");
  for (int c : channels) {
    if (c < 1) throw ValidationError("channel counts must be positive");
  }
  const int n = int(channels.size());
  if (image < (1 << n) || image % (1 << n) != 0) {
    throw ValidationError("image size must be divisible by 2^stages");
  }
  if (lr <= 0.0 || batch < 1 || epochs < 1 || subject_cap < 1) {
    throw ValidationError("bad training hyperparameters");
  }
  if (!(beta_init >= 0.0 && beta_init <= 1.0)) throw ValidationError("beta_init outside [0,1]");
  if (fx_kind != "random" && fx_kind != "identity" && fx_kind != "external") {
    throw ValidationError("unknown feature extractor kind: " + fx_kind);
  }
  if (fx_kind == "external" && fx_weights.empty()) {
    throw ValidationError("external feature extractor needs a weights file");
  }
}

BetaState update_beta(const BetaState& state, double mean_kl, double mean_perceptual) {
  if (!std::isfinite(mean_kl) || !std::isfinite(mean_perceptual)) {
    throw ValidationError("beta update on non-finite loss means");
  }
  BetaState out = state;
  out.beta = std::clamp(state.beta + state.beta_lr * (mean_kl - mean_perceptual), 0.0, 1.0);
  return out;
}

FeatureExtractor FeatureExtractor::random(uint64_t seed) {
  FeatureExtractor fx;
  fx.kind = Kind::kRandom;
  const std::vector<std::size_t> chans = {8, 16, 32};
  std::size_t in_c = 1;
  for (std::size_t i = 0; i < chans.size(); ++i) {
    Tensor w({chans[i], in_c, 3, 3});
    Rng rng = Rng::stream(seed, "fx", uint64_t(i));
    const double stddev = std::sqrt(1.0 / double(in_c * 9));
    for (std::size_t j = 0; j < w.size(); ++j) w[j] = rng.normal(0.0, stddev);
    fx.weights.push_back(std::move(w));
    fx.biases.push_back(Tensor::zeros({chans[i]}));
    in_c = chans[i];
  }
  return fx;
}

FeatureExtractor FeatureExtractor::identity() {
  FeatureExtractor fx;
  fx.kind = Kind::kIdentity;
  return fx;
}

FeatureExtractor FeatureExtractor::external(const std::filesystem::path& weights_file) {
  Checkpoint ck = load_checkpoint(weights_file);
  FeatureExtractor fx;
  fx.kind = Kind::kExternal;
  for (int i = 0;; ++i) {
    const std::string wn = "stage" + std::to_string(i) + ".w";
    const std::string bn = "stage" + std::to_string(i) + ".b";
    auto wit = ck.tensors.find(wn);
    if (wit == ck.tensors.end()) break;
    auto bit = ck.tensors.find(bn);
    if (bit == ck.tensors.end() || wit->second.rank() != 4 || bit->second.rank() != 1 ||
        bit->second.dim(0) != wit->second.dim(0)) {
      throw ValidationError("bad extractor stage '" + wn + "' in " + weights_file.string());
    }
    fx.weights.push_back(wit->second);
    fx.biases.push_back(bit->second);
  }
  if (fx.weights.empty()) {
    throw ValidationError("no extractor stages in " + weights_file.string());
  }
  fx.replicate = int(fx.weights[0].dim(1));
  return fx;
}

FeatureExtractor FeatureExtractor::make(const std::string& kind, uint64_t seed,
                                        const std::string& weights_file) {
  if (kind == "random") return random(seed);
  if (kind == "identity") return identity();
  if (kind == "external") return external(weights_file);
  throw ValidationError("unknown feature extractor kind: " + kind);
}

std::vector<Var> FeatureExtractor::features(Graph& g, Var x) const {
  if (kind == Kind::kIdentity) return {x};
  Var h = x;
  if (replicate > 1 && g.val(x).dim(1) == 1) {
    // 1x1 all-ones conv replicates the single channel.
    Tensor rep({std::size_t(replicate), 1, 1, 1});
    rep.fill(1.0);
    h = g.conv2d(h, g.value(std::move(rep)), g.value(Tensor::zeros({std::size_t(replicate)})), 1,
                 0);
  }
  std::vector<Var> maps;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    h = g.tanh_(g.conv2d(h, g.value(weights[i]), g.value(biases[i]), 2, 1));
    maps.push_back(h);
  }
  return maps;
}

Var perceptual_loss(Graph& g, const FeatureExtractor& fx, Var x, Var xhat) {
  std::vector<Var> fa = fx.features(g, x);
  std::vector<Var> fb = fx.features(g, xhat);
  Var total;
  for (std::size_t i = 0; i < fa.size(); ++i) {
    Var d = g.sub(fa[i], fb[i]);
    Var term = g.mean(g.mul(d, d));
    total = total.valid() ? g.add(total, term) : term;
  }
  return total;
}

Var kl_loss(Graph& g, Var mu, Var logvar) {
  const std::size_t batch = g.val(mu).dim(0);
  Var t = g.add(g.mul(mu, mu), g.exp_(logvar));
  t = g.add(t, g.scale(logvar, -1.0));
  t = g.add_scalar(t, -1.0);
  return g.scale(g.sum(t), 0.5 / double(batch));
}

Var pretrain_loss(Graph& g, Var perceptual, Var kl, double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ValidationError("beta outside [0,1]");
  return g.add(g.scale(perceptual, 1.0 - beta), g.scale(kl, beta));
}

Var reparameterize(Graph& g, Var mu, Var logvar, Var eps) {
  return g.add(mu, g.mul(g.exp_(g.scale(logvar, 0.5)), eps));
}

namespace {

struct ParamSpec {
  std::string name;
  std::vector<std::size_t> shape;
  bool zero_init;
};

std::vector<ParamSpec> layout(const VaeConfig& cfg) {
  std::vector<ParamSpec> specs;
  const int n = int(cfg.channels.size());
  auto conv = [&](const std::string& name, std::size_t out_c, std::size_t in_c, std::size_t k) {
    specs.push_back({name + ".w", {out_c, in_c, k, k}, false});
    specs.push_back({name + ".b", {out_c}, false});
  };
  std::size_t in_c = 1;
  for (int i = 0; i < n; ++i) {
    const std::size_t c = std::size_t(cfg.channels[std::size_t(i)]);
    const std::string s = "enc.s" + std::to_string(i);
    conv(s + ".conv", c, in_c, 3);
    conv(s + ".res1", c, c, 3);
    conv(s + ".res2", c, c, 3);
    in_c = c;
  }
  const std::size_t side = std::size_t(cfg.image >> n);
  const std::size_t flat = std::size_t(cfg.channels.back()) * side * side;
  const std::size_t latent = std::size_t(cfg.latent_dim);
  specs.push_back({"enc.mu.w", {flat, latent}, true});
  specs.push_back({"enc.mu.b", {latent}, true});
  specs.push_back({"enc.logvar.w", {flat, latent}, true});
  specs.push_back({"enc.logvar.b", {latent}, true});
  specs.push_back({"dec.fc.w", {latent, flat}, false});
  specs.push_back({"dec.fc.b", {flat}, false});
  for (int i = 0; i < n; ++i) {
    const std::size_t tin = std::size_t(cfg.channels[std::size_t(n - 1 - i)]);
    const std::size_t tout = (i == n - 1) ? 1 : std::size_t(cfg.channels[std::size_t(n - 2 - i)]);
    const std::string s = "dec.s" + std::to_string(i);
    specs.push_back({s + ".tconv.w", {tin, tout, 4, 4}, false});
    specs.push_back({s + ".tconv.b", {tout}, false});
    if (i != n - 1) {
      conv(s + ".res1", tout, tout, 3);
      conv(s + ".res2", tout, tout, 3);
    }
  }
  return specs;
}

double fan_in(const ParamSpec& spec) {
  const auto& s = spec.shape;
  if (s.size() == 4) {
    // conv (O,C,kh,kw); tconv (I,O,kh,kw) uses its first dim as fan-in too.
    const bool tconv = spec.name.find("tconv") != std::string::npos;
    return double((tconv ? s[0] : s[1]) * s[2] * s[3]);
  }
  if (s.size() == 2) return double(s[0]);
  return 1.0;
}

}  // namespace

Vae Vae::init(const VaeConfig& cfg) {
  cfg.validate();
  Vae v;
  v.cfg_ = cfg;
  auto specs = layout(cfg);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    Tensor t(specs[i].shape);
    if (!specs[i].zero_init) {
      Rng rng = Rng::stream(cfg.seed, "init", uint64_t(i));
      const double stddev = std::sqrt(2.0 / fan_in(specs[i]));
      for (std::size_t j = 0; j < t.size(); ++j) t[j] = rng.normal(0.0, stddev);
    }
    v.index_[specs[i].name] = int(i);
    v.names_.push_back(specs[i].name);
    v.tensors_.push_back(std::move(t));
  }
  return v;
}

Vae Vae::from_checkpoint(const Checkpoint& ck) {
  VaeConfig cfg;
  cfg.latent_dim = ck.latent_dim;
  cfg.image = ck.image;
  cfg.channels = ck.channels;
  cfg.beta_lr = ck.beta_lr;
  cfg.seed = ck.seed;
  cfg.fx_seed = ck.fx_seed;
  cfg.fx_kind = ck.fx_kind;
  cfg.validate();
  Vae v;
  v.cfg_ = cfg;
  auto specs = layout(cfg);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    auto it = ck.tensors.find(specs[i].name);
    if (it == ck.tensors.end()) {
      throw ValidationError("checkpoint missing tensor '" + specs[i].name + "'");
    }
    if (it->second.shape() != specs[i].shape) {
      throw ValidationError("checkpoint tensor '" + specs[i].name + "' has shape " +
                            it->second.shape_str());
    }
    v.index_[specs[i].name] = int(i);
    v.names_.push_back(specs[i].name);
    v.tensors_.push_back(it->second);
  }
  return v;
}

Checkpoint Vae::to_checkpoint(double beta, long epoch) const {
  Checkpoint ck;
  ck.latent_dim = cfg_.latent_dim;
  ck.image = cfg_.image;
  ck.channels = cfg_.channels;
  ck.beta = beta;
  ck.beta_lr = cfg_.beta_lr;
  ck.epoch = epoch;
  ck.seed = cfg_.seed;
  ck.fx_seed = cfg_.fx_seed;
  ck.fx_kind = cfg_.fx_kind;
  for (std::size_t i = 0; i < names_.size(); ++i) ck.tensors[names_[i]] = tensors_[i];
  return ck;
}

int Vae::idx(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown vae tensor '" + name + "'");
  return it->second;
}

Tensor& Vae::tensor(const std::string& name) { return tensors_[std::size_t(idx(name))]; }

Vae::Bound Vae::bind(Graph& g, bool requires_grad) const {
  Bound b;
  b.vars.reserve(tensors_.size());
  for (const Tensor& t : tensors_) b.vars.push_back(g.input(t, requires_grad));
  return b;
}

std::pair<Var, Var> Vae::encode(Graph& g, const Bound& b, Var x) const {
  // g.val references go stale as soon as another node is pushed; copy what we need.
  std::size_t batch = 0;
  {
    const Tensor& vx = g.val(x);
    if (vx.rank() != 4 || vx.dim(1) != 1 || vx.dim(2) != std::size_t(cfg_.image) ||
        vx.dim(3) != std::size_t(cfg_.image)) {
      throw ValidationError("encode expects (N,1," + std::to_string(cfg_.image) + "," +
                            std::to_string(cfg_.image) + "), got " + vx.shape_str());
    }
    batch = vx.dim(0);
  }
  auto p = [&](const std::string& name) { return b.vars[std::size_t(idx(name))]; };
  Var h = x;
  const int n = int(cfg_.channels.size());
  for (int i = 0; i < n; ++i) {
    const std::string s = "enc.s" + std::to_string(i);
    h = g.relu(g.conv2d(h, p(s + ".conv.w"), p(s + ".conv.b"), 2, 1));
    Var r = g.conv2d(g.relu(g.conv2d(h, p(s + ".res1.w"), p(s + ".res1.b"), 1, 1)),
                     p(s + ".res2.w"), p(s + ".res2.b"), 1, 1);
    h = g.relu(g.add(h, r));
  }
  const std::size_t side = std::size_t(cfg_.image >> n);
  const std::size_t flat = std::size_t(cfg_.channels.back()) * side * side;
  h = g.reshape(h, {batch, flat});
  Var mu = g.linear(h, p("enc.mu.w"), p("enc.mu.b"));
  Var logvar = g.clamp(g.linear(h, p("enc.logvar.w"), p("enc.logvar.b")), -10.0, 10.0);
  return {mu, logvar};
}

Var Vae::decode(Graph& g, const Bound& b, Var z) const {
  std::size_t batch = 0;
  {
    const Tensor& vz = g.val(z);
    if (vz.rank() != 2 || vz.dim(1) != std::size_t(cfg_.latent_dim)) {
      throw ValidationError("decode expects (N," + std::to_string(cfg_.latent_dim) + "), got " +
                            vz.shape_str());
    }
    batch = vz.dim(0);
  }
  auto p = [&](const std::string& name) { return b.vars[std::size_t(idx(name))]; };
  const int n = int(cfg_.channels.size());
  const std::size_t side = std::size_t(cfg_.image >> n);
  Var h = g.relu(g.linear(z, p("dec.fc.w"), p("dec.fc.b")));
  h = g.reshape(h, {batch, std::size_t(cfg_.channels.back()), side, side});
  for (int i = 0; i < n; ++i) {
    const std::string s = "dec.s" + std::to_string(i);
    h = g.tconv2d(h, p(s + ".tconv.w"), p(s + ".tconv.b"), 2, 1);
    if (i == n - 1) {
      h = g.sigmoid(h);
    } else {
      h = g.relu(h);
      Var r = g.conv2d(g.relu(g.conv2d(h, p(s + ".res1.w"), p(s + ".res1.b"), 1, 1)),
                       p(s + ".res2.w"), p(s + ".res2.b"), 1, 1);
      h = g.relu(g.add(h, r));
    }
  }
  return h;
}

Tensor Vae::encode_mu(const Tensor& batch) const { return encode_dist(batch).first; }

std::pair<Tensor, Tensor> Vae::encode_dist(const Tensor& batch) const {
  Graph g;
  Bound b = bind(g, false);
  auto [mu, logvar] = encode(g, b, g.input(batch, false));
  return {g.val(mu), g.val(logvar)};
}

Tensor Vae::decode_batch(const Tensor& z) const {
  Graph g;
  Bound b = bind(g, false);
  return g.val(decode(g, b, g.input(z, false)));
}

std::vector<Tensor*> Vae::params() {
  std::vector<Tensor*> out;
  out.reserve(tensors_.size());
  for (Tensor& t : tensors_) out.push_back(&t);
  return out;
}

void write_pretrain_log(const std::filesystem::path& path, const std::vector<EpochLog>& log) {
  CsvTable table;
  table.header = {"epoch", "mean_perceptual", "mean_kl", "beta", "val_perceptual", "val_kl"};
  for (const auto& e : log) {
    table.rows.push_back({std::to_string(e.epoch), format_double(e.mean_perceptual),
                          format_double(e.mean_kl), format_double(e.beta),
                          format_double(e.val_perceptual), format_double(e.val_kl)});
  }
  write_csv(path, table);
}

namespace {

std::vector<std::size_t> epoch_indices(const EventImageSet& data,
                                       const std::vector<std::string>& subjects, int cap,
                                       uint64_t seed, long epoch) {
  std::vector<std::string> ordered = subjects;
  std::sort(ordered.begin(), ordered.end());
  std::vector<std::size_t> indices;
  for (const auto& s : ordered) {
    auto it = data.by_subject.find(s);
    if (it == data.by_subject.end()) continue;
    std::vector<std::size_t> pool = it->second;
    if (int(pool.size()) > cap) {
      Rng rng = Rng::stream(seed, "sample", uint64_t(epoch), Rng::hash_str(s));
      for (std::size_t i = 0; i < std::size_t(cap); ++i) {
        std::size_t j = i + rng.below(pool.size() - i);
        std::swap(pool[i], pool[j]);
      }
      pool.resize(std::size_t(cap));
      std::sort(pool.begin(), pool.end());
    }
    indices.insert(indices.end(), pool.begin(), pool.end());
  }
  return indices;
}

// Mean perceptual (from decode(mu)) and KL over the given events.
std::pair<double, double> holdout_losses(const EventImageSet& data,
                                         const std::vector<std::size_t>& indices, const Vae& vae,
                                         const FeatureExtractor& fx, std::size_t batch) {
  if (indices.empty()) {
    return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  }
  double lp_sum = 0.0, kl_sum = 0.0;
  for (std::size_t start = 0; start < indices.size(); start += batch) {
    std::vector<std::size_t> slice(indices.begin() + long(start),
                                   indices.begin() + long(std::min(start + batch, indices.size())));
    Graph g;
    Vae::Bound b = vae.bind(g, false);
    Var x = g.input(data.batch(slice), false);
    auto [mu, logvar] = vae.encode(g, b, x);
    Var recon = vae.decode(g, b, mu);
    Var lp = perceptual_loss(g, fx, x, recon);
    Var kl = kl_loss(g, mu, logvar);
    lp_sum += g.val(lp)[0] * double(slice.size());
    kl_sum += g.val(kl)[0] * double(slice.size());
  }
  return {lp_sum / double(indices.size()), kl_sum / double(indices.size())};
}

}  // namespace

PretrainResult pretrain(const EventImageSet& data, const std::vector<std::string>& train_subjects,
                        const std::vector<std::string>& val_subjects, const VaeConfig& cfg,
                        const std::filesystem::path& checkpoint_path,
                        const std::filesystem::path& log_csv) {
  cfg.validate();
  FeatureExtractor fx = FeatureExtractor::make(cfg.fx_kind, cfg.fx_seed, cfg.fx_weights);
  Vae vae = Vae::init(cfg);
  Adam adam({cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay}, vae.params());
  BetaState beta{cfg.beta_init, cfg.beta_lr};

  std::vector<std::size_t> val_indices;
  {
    std::vector<std::string> ordered = val_subjects;
    std::sort(ordered.begin(), ordered.end());
    for (const auto& s : ordered) {
      auto it = data.by_subject.find(s);
      if (it != data.by_subject.end()) {
        val_indices.insert(val_indices.end(), it->second.begin(), it->second.end());
      }
    }
  }

  std::vector<EpochLog> log;
  bool have_checkpoint = false;
  const std::size_t eval_batch = std::size_t(std::max(1, std::min(cfg.batch, 64)));
  for (long epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> indices =
        epoch_indices(data, train_subjects, cfg.subject_cap, cfg.seed, epoch);
    if (indices.empty()) throw ValidationError("empty training set for pretraining");
    Rng shuffle = Rng::stream(cfg.seed, "shuffle", uint64_t(epoch));
    for (std::size_t i = indices.size(); i > 1; --i) {
      std::swap(indices[i - 1], indices[shuffle.below(i)]);
    }

    double lp_sum = 0.0, kl_sum = 0.0;
    long step = 0;
    try {
      for (std::size_t start = 0; start < indices.size(); start += std::size_t(cfg.batch)) {
        std::vector<std::size_t> slice(
            indices.begin() + long(start),
            indices.begin() + long(std::min(start + std::size_t(cfg.batch), indices.size())));
        Graph g;
        Vae::Bound b = vae.bind(g, true);
        Var x = g.input(data.batch(slice), false);
        auto [mu, logvar] = vae.encode(g, b, x);
        Tensor eps({slice.size(), std::size_t(cfg.latent_dim)});
        Rng erng = Rng::stream(cfg.seed, "eps", uint64_t(epoch), uint64_t(step));
        for (std::size_t j = 0; j < eps.size(); ++j) eps[j] = erng.normal();
        Var z = reparameterize(g, mu, logvar, g.input(std::move(eps), false));
        Var recon = vae.decode(g, b, z);
        Var lp = perceptual_loss(g, fx, x, recon);
        Var kl = kl_loss(g, mu, logvar);
        Var loss = pretrain_loss(g, lp, kl, beta.beta);
        g.backward(loss);

        std::vector<const Tensor*> grads;
        grads.reserve(b.vars.size());
        for (Var v : b.vars) grads.push_back(&g.grad(v));
        adam.step(grads);
        beta = update_beta(beta, g.val(kl)[0], g.val(lp)[0]);
        if (!(beta.beta >= 0.0 && beta.beta <= 1.0)) {
          throw PipelineError("beta left [0,1]");
        }
        lp_sum += g.val(lp)[0] * double(slice.size());
        kl_sum += g.val(kl)[0] * double(slice.size());
        ++step;
      }
    } catch (const PipelineError& e) {
      std::string note = have_checkpoint
                             ? "; last good checkpoint retained at " + checkpoint_path.string()
                             : "; no checkpoint written yet";
      throw PipelineError("pretraining diverged at epoch " + std::to_string(epoch) + ": " +
                          e.what() + note);
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.mean_perceptual = lp_sum / double(indices.size());
    entry.mean_kl = kl_sum / double(indices.size());
    entry.beta = beta.beta;
    auto [vlp, vkl] = holdout_losses(data, val_indices, vae, fx, eval_batch);
    entry.val_perceptual = vlp;
    entry.val_kl = vkl;
    log.push_back(entry);

    save_checkpoint(checkpoint_path, vae.to_checkpoint(beta.beta, epoch));
    have_checkpoint = true;
  }
  write_pretrain_log(log_csv, log);

  PretrainResult result;
  result.checkpoint = load_checkpoint(checkpoint_path);
  result.log = std::move(log);
  return result;
}

std::vector<double> per_event_reconstruction_loss(const EventImageSet& data, const Vae& vae,
                                                  const FeatureExtractor& fx, std::size_t batch) {
  std::vector<double> losses(data.size(), 0.0);
  std::vector<std::size_t> all(data.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  for (std::size_t start = 0; start < all.size(); start += batch) {
    std::vector<std::size_t> slice(all.begin() + long(start),
                                   all.begin() + long(std::min(start + batch, all.size())));
    Graph g;
    Vae::Bound b = vae.bind(g, false);
    Var x = g.input(data.batch(slice), false);
    auto [mu, logvar] = vae.encode(g, b, x);
    (void)logvar;
    Var recon = vae.decode(g, b, mu);
    std::vector<Var> fa = fx.features(g, x);
    std::vector<Var> fb = fx.features(g, recon);
    for (std::size_t s = 0; s < fa.size(); ++s) {
      const Tensor& da = g.val(fa[s]);
      const Tensor& db = g.val(fb[s]);
      const std::size_t per = da.size() / slice.size();
      for (std::size_t i = 0; i < slice.size(); ++i) {
        double acc = 0.0;
        const double* pa = da.data() + i * per;
        const double* pb = db.data() + i * per;
        for (std::size_t j = 0; j < per; ++j) {
          const double diff = pa[j] - pb[j];
          acc += diff * diff;
        }
        losses[slice[i]] += acc / double(per);
      }
    }
  }
  return losses;
}

}  // namespace hfo
