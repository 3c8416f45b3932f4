#include "hfo/classifier.hpp"

#include <algorithm>
#include <cmath>

#include "hfo/adam.hpp"
#include "hfo/common.hpp"
#include "hfo/csvio.hpp"
#include "hfo/graph.hpp"

namespace hfo {

namespace {

constexpr double kProbFloor = 1e-7;

// p = clamp(sigmoid(relu(x w1 + b1) w2 + b2)) flattened to (N).
Var prob_graph(Graph& g, Var x, Var w1, Var b1, Var w2, Var b2) {
  Var h = g.relu(g.linear(x, w1, b1));
  Var p = g.sigmoid(g.linear(h, w2, b2));
  p = g.clamp(p, kProbFloor, 1.0 - kProbFloor);
  return g.reshape(p, {g.val(x).dim(0)});
}

// Mean over the batch of -[l log p + (1-l) log(1-p)].
Var bce_graph(Graph& g, Var p, const std::vector<int>& labels) {
  Tensor l({labels.size()});
  for (std::size_t i = 0; i < labels.size(); ++i) l[i] = double(labels[i]);
  Var lv = g.input(std::move(l), false);
  Var one_minus_l = g.add_scalar(g.scale(lv, -1.0), 1.0);
  Var one_minus_p = g.add_scalar(g.scale(p, -1.0), 1.0);
  Var ll = g.add(g.mul(lv, g.log_(p)), g.mul(one_minus_l, g.log_(one_minus_p)));
  return g.scale(g.mean(ll), -1.0);
}

Tensor images_to_batch(const Tensor& image) {
  if (image.rank() != 2) throw ValidationError("expected a (H,W) image");
  Tensor b({1, 1, image.dim(0), image.dim(1)});
  std::copy(image.data(), image.data() + image.size(), b.data());
  return b;
}

}  // namespace

void ClassifierConfig::validate() const {
  if (lr <= 0.0 || batch < 1 || epochs < 1) throw ValidationError("bad classifier hyperparameters");
  if (hidden < 0) throw ValidationError("hidden must be non-negative");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("threshold outside (0,1)");
}

ClassifierParams init_classifier(int latent_dim, int hidden, uint64_t seed) {
  if (latent_dim < 1 || hidden < 1) throw ValidationError("bad classifier dimensions");
  ClassifierParams psi;
  psi.w1 = Tensor({std::size_t(latent_dim), std::size_t(hidden)});
  psi.b1 = Tensor::zeros({std::size_t(hidden)});
  psi.w2 = Tensor({std::size_t(hidden), 1});
  psi.b2 = Tensor::zeros({1});
  Rng r1 = Rng::stream(seed, "cls-init", 0);
  const double s1 = std::sqrt(2.0 / double(latent_dim));
  for (std::size_t i = 0; i < psi.w1.size(); ++i) psi.w1[i] = r1.normal(0.0, s1);
  Rng r2 = Rng::stream(seed, "cls-init", 1);
  const double s2 = std::sqrt(1.0 / double(hidden));
  for (std::size_t i = 0; i < psi.w2.size(); ++i) psi.w2[i] = r2.normal(0.0, s2);
  return psi;
}

Tensor make_surrogate(const Vae& vae, const Tensor& image, Rng& rng) {
  auto [mu, logvar] = vae.encode_dist(images_to_batch(image));
  Tensor z({1, mu.dim(1)});
  for (std::size_t j = 0; j < z.size(); ++j) {
    z[j] = mu[j] + std::exp(0.5 * logvar[j]) * rng.normal();
  }
  Tensor out = vae.decode_batch(z);
  return out.reshaped({out.dim(2), out.dim(3)});
}

Tensor embed(const Vae& vae, const Tensor& image) {
  Tensor mu = vae.encode_mu(images_to_batch(image));
  return mu.reshaped({mu.dim(1)});
}

Tensor classifier_probs(const ClassifierParams& psi, const Tensor& mu) {
  Graph g;
  Var p = prob_graph(g, g.input(mu, false), g.input(psi.w1, false), g.input(psi.b1, false),
                     g.input(psi.w2, false), g.input(psi.b2, false));
  return g.val(p);
}

double classifier_loss(const Tensor& p_real, const Tensor& p_surr,
                       const std::vector<int>& labels) {
  if (p_real.size() != labels.size()) throw ValidationError("loss inputs must align");
  auto bce = [&](const Tensor& p) {
    double acc = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const double q = std::clamp(p[i], kProbFloor, 1.0 - kProbFloor);
      acc -= labels[i] == 1 ? std::log(q) : std::log(1.0 - q);
    }
    return acc / double(labels.size());
  };
  double loss = bce(p_real);
  if (p_surr.size() != 0) {
    if (p_surr.size() != labels.size()) throw ValidationError("loss inputs must align");
    loss += bce(p_surr);
  }
  return loss;
}

namespace {

// Latents of decode(mu + sigma*eps) for the given rows, eps keyed by
// (seed, event id, epoch) so results are order-free.
Tensor surrogate_latents(const EventImageSet& data, const std::vector<std::size_t>& rows,
                         const Vae& vae, const Tensor& mu_all, const Tensor& logvar_all,
                         uint64_t seed, long epoch, std::size_t chunk) {
  const std::size_t latent = mu_all.dim(1);
  Tensor out({rows.size(), latent});
  for (std::size_t start = 0; start < rows.size(); start += chunk) {
    const std::size_t stop = std::min(start + chunk, rows.size());
    Tensor z({stop - start, latent});
    for (std::size_t r = start; r < stop; ++r) {
      const std::size_t i = rows[r];
      Rng rng = Rng::stream(seed, "surrogate", Rng::hash_str(data.events[i].id()),
                            uint64_t(epoch));
      for (std::size_t j = 0; j < latent; ++j) {
        z[(r - start) * latent + j] =
            mu_all[i * latent + j] + std::exp(0.5 * logvar_all[i * latent + j]) * rng.normal();
      }
    }
    Tensor images = vae.decode_batch(z);
    Tensor mu_hat = vae.encode_mu(images);
    std::copy(mu_hat.data(), mu_hat.data() + mu_hat.size(), out.data() + start * latent);
  }
  return out;
}

Tensor gather_rows(const Tensor& src, const std::vector<std::size_t>& rows) {
  const std::size_t d = src.dim(1);
  Tensor out({rows.size(), d});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy(src.data() + rows[r] * d, src.data() + (rows[r] + 1) * d, out.data() + r * d);
  }
  return out;
}

}  // namespace

ClassifierResult train_classifier(const EventImageSet& data, const std::vector<int>& labels,
                                  const Vae& vae, const ClassifierConfig& cfg) {
  cfg.validate();
  const std::size_t n = data.size();
  if (n == 0) throw ValidationError("empty classifier training set");
  if (labels.size() != n) throw ValidationError("labels must cover all training events");
  for (int l : labels) {
    if (l != 0 && l != 1) throw ValidationError("labels must be 0 or 1");
  }

  const uint64_t frozen = param_hash(vae.to_checkpoint(0.0, 0));
  const std::size_t chunk = 64;

  // Frozen encoder: event latents are fixed for the whole run.
  const std::size_t latent = std::size_t(vae.config().latent_dim);
  Tensor mu_all({n, latent}), logvar_all({n, latent});
  {
    std::vector<std::size_t> rows;
    for (std::size_t start = 0; start < n; start += chunk) {
      rows.clear();
      for (std::size_t i = start; i < std::min(start + chunk, n); ++i) rows.push_back(i);
      auto [mu, logvar] = vae.encode_dist(data.batch(rows));
      std::copy(mu.data(), mu.data() + mu.size(), mu_all.data() + start * latent);
      std::copy(logvar.data(), logvar.data() + logvar.size(), logvar_all.data() + start * latent);
    }
  }

  const int hidden = cfg.hidden > 0 ? cfg.hidden : 2 * int(latent);
  ClassifierParams psi = init_classifier(int(latent), hidden, cfg.seed);
  std::vector<Tensor*> params = {&psi.w1, &psi.b1, &psi.w2, &psi.b2};
  Adam adam({cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay}, params);

  std::vector<TrainEpochLog> log;
  const std::size_t batch = std::min(n, std::size_t(cfg.batch));
  for (long epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    if (batch < n) {
      Rng shuffle = Rng::stream(cfg.seed, "cls-shuffle", uint64_t(epoch));
      for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
    }
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      std::vector<std::size_t> rows(order.begin() + long(start),
                                    order.begin() + long(std::min(start + batch, n)));
      std::vector<int> batch_labels;
      batch_labels.reserve(rows.size());
      for (std::size_t i : rows) batch_labels.push_back(labels[i]);

      Graph g;
      Var w1 = g.input(psi.w1, true), b1 = g.input(psi.b1, true);
      Var w2 = g.input(psi.w2, true), b2 = g.input(psi.b2, true);
      Var p_real = prob_graph(g, g.input(gather_rows(mu_all, rows), false), w1, b1, w2, b2);
      Var loss = bce_graph(g, p_real, batch_labels);
      if (cfg.augment) {
        Tensor mu_hat =
            surrogate_latents(data, rows, vae, mu_all, logvar_all, cfg.seed, epoch, chunk);
        Var p_surr = prob_graph(g, g.input(std::move(mu_hat), false), w1, b1, w2, b2);
        loss = g.add(loss, bce_graph(g, p_surr, batch_labels));
      }
      g.backward(loss);
      adam.step({&g.grad(w1), &g.grad(b1), &g.grad(w2), &g.grad(b2)});
      loss_sum += g.val(loss)[0] * double(rows.size());
    }
    log.push_back({epoch, loss_sum / double(n)});
  }

  if (param_hash(vae.to_checkpoint(0.0, 0)) != frozen) {
    throw PipelineError("classifier training mutated the frozen encoder");
  }
  return {std::move(psi), std::move(log)};
}

void write_train_log(const std::filesystem::path& path, const std::vector<TrainEpochLog>& log) {
  CsvTable table;
  table.header = {"epoch", "loss"};
  for (const auto& e : log) {
    table.rows.push_back({std::to_string(e.epoch), format_double(e.loss)});
  }
  write_csv(path, table);
}

std::vector<Prediction> predict(const EventImageSet& data, const Vae& vae,
                                const ClassifierParams& psi, double threshold) {
  std::vector<Prediction> out;
  out.reserve(data.size());
  const std::size_t chunk = 64;
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    rows.clear();
    for (std::size_t i = start; i < std::min(start + chunk, data.size()); ++i) rows.push_back(i);
    Tensor probs = classifier_probs(psi, vae.encode_mu(data.batch(rows)));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      Prediction p;
      p.event = data.events[rows[r]];
      p.probability = probs[r];
      p.label = probs[r] > threshold ? 1 : 0;
      out.push_back(std::move(p));
    }
  }
  return out;
}

void save_predictions(const std::filesystem::path& path, const std::vector<Prediction>& preds) {
  std::vector<const Prediction*> ordered;
  ordered.reserve(preds.size());
  for (const auto& p : preds) ordered.push_back(&p);
  std::sort(ordered.begin(), ordered.end(), [](const Prediction* a, const Prediction* b) {
    return event_order_less(a->event, b->event);
  });
  CsvTable table;
  table.header = {"subject", "channel", "start_ms", "end_ms", "probability", "label"};
  for (const Prediction* p : ordered) {
    table.rows.push_back({p->event.subject, p->event.channel, format_double(p->event.start_ms),
                          format_double(p->event.end_ms), format_double(p->probability),
                          std::to_string(p->label)});
  }
  write_csv(path, table);
}

std::vector<Prediction> load_predictions(const std::filesystem::path& path) {
  CsvTable table = read_csv(path);
  const std::vector<std::string> want = {"subject",  "channel",     "start_ms",
                                         "end_ms",   "probability", "label"};
  if (table.header != want) {
    throw ValidationError("bad predictions header in " + path.string());
  }
  std::vector<Prediction> out;
  out.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    Prediction p;
    p.event.subject = row[0];
    p.event.channel = row[1];
    p.event.start_ms = parse_double(row[2], "start_ms");
    p.event.end_ms = parse_double(row[3], "end_ms");
    p.probability = parse_double(row[4], "probability");
    p.label = int(parse_long(row[5], "label"));
    if (p.label != 0 && p.label != 1) {
      throw ValidationError("label must be 0 or 1 in " + path.string());
    }
    out.push_back(std::move(p));
  }
  return out;
}

void attach_classifier(Checkpoint& ck, const ClassifierParams& psi) {
  std::map<std::string, Tensor> table;
  table["cls.w1"] = psi.w1;
  table["cls.b1"] = psi.b1;
  table["cls.w2"] = psi.w2;
  table["cls.b2"] = psi.b2;
  ck.sections["classifier"] = std::move(table);
}

ClassifierParams classifier_from_checkpoint(const Checkpoint& ck) {
  auto sec = ck.sections.find("classifier");
  if (sec == ck.sections.end()) throw ValidationError("checkpoint has no classifier section");
  auto get = [&](const std::string& name, std::size_t rank) -> const Tensor& {
    auto it = sec->second.find(name);
    if (it == sec->second.end()) {
      throw ValidationError("classifier section missing tensor '" + name + "'");
    }
    if (it->second.rank() != rank) {
      throw ValidationError("classifier tensor '" + name + "' has wrong rank");
    }
    return it->second;
  };
  ClassifierParams psi;
  psi.w1 = get("cls.w1", 2);
  psi.b1 = get("cls.b1", 1);
  psi.w2 = get("cls.w2", 2);
  psi.b2 = get("cls.b2", 1);
  if (psi.w1.dim(0) != std::size_t(ck.latent_dim) || psi.w1.dim(1) != psi.b1.dim(0) ||
      psi.w2.dim(0) != psi.w1.dim(1) || psi.w2.dim(1) != 1 || psi.b2.dim(0) != 1) {
    throw ValidationError("classifier tensor shapes are inconsistent");
  }
  return psi;
}

}  // namespace hfo
