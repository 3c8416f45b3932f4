#include "hfo/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include <json.hpp>

#include "hfo/common.hpp"
#include "hfo/csvio.hpp"
#include "hfo/latent.hpp"
#include "hfo/rng.hpp"

namespace hfo {

using nlohmann::json;

namespace {

json config_to_json(const PipelineConfig& cfg) {
  json j;
  j["manifest"] = cfg.manifest_path.string();
  j["seed"] = cfg.seed;
  j["kfolds"] = cfg.kfolds;
  j["val_fraction"] = cfg.val_fraction;
  j["window_ms"] = cfg.window_ms;
  j["tf"] = {{"f_min", cfg.tf.f_min},
             {"f_max", cfg.tf.f_max},
             {"n_freqs", cfg.tf.n_freqs},
             {"out_size", cfg.tf.out_size}};
  j["vae"] = {{"latent_dim", cfg.vae.latent_dim},
              {"image", cfg.vae.image},
              {"channels", cfg.vae.channels},
              {"lr", cfg.vae.lr},
              {"weight_decay", cfg.vae.weight_decay},
              {"beta_init", cfg.vae.beta_init},
              {"beta_lr", cfg.vae.beta_lr},
              {"epochs", cfg.vae.epochs},
              {"batch", cfg.vae.batch},
              {"subject_cap", cfg.vae.subject_cap},
              {"fx_seed", cfg.vae.fx_seed},
              {"fx_kind", cfg.vae.fx_kind},
              {"fx_weights", cfg.vae.fx_weights}};
  j["classifier"] = {{"lr", cfg.cls.lr},
                     {"weight_decay", cfg.cls.weight_decay},
                     {"batch", cfg.cls.batch},
                     {"epochs", cfg.cls.epochs},
                     {"augment", cfg.cls.augment},
                     {"threshold", cfg.cls.threshold},
                     {"hidden", cfg.cls.hidden}};
  j["sweep"] = {{"steps", cfg.sweep_steps}, {"lo_q", cfg.sweep_lo_q}, {"hi_q", cfg.sweep_hi_q}};
  j["knockout_k"] = cfg.knockout_k;
  return j;
}

void require_file(const std::filesystem::path& path, const std::string& what,
                  const std::string& produced_by) {
  if (!std::filesystem::exists(path)) {
    throw ValidationError("missing " + what + ": " + path.string() + " (run the " + produced_by +
                          " stage first)");
  }
}

json parse_json_file(const std::filesystem::path& path, const std::string& what) {
  json j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw ValidationError("malformed " + what + ": " + path.string());
  return j;
}

FoldSplit find_fold(const std::vector<FoldSplit>& folds, int fold) {
  for (const auto& f : folds) {
    if (f.fold_id == fold) return f;
  }
  throw ValidationError("fold " + std::to_string(fold) + " not in folds.json (have " +
                        std::to_string(folds.size()) + " folds)");
}

std::vector<std::string> concat_sorted(const std::vector<std::string>& a,
                                       const std::vector<std::string>& b) {
  std::vector<std::string> out = a;
  out.insert(out.end(), b.begin(), b.end());
  std::sort(out.begin(), out.end());
  return out;
}

uint64_t seed_for(const PipelineConfig& cfg, const char* stage, int fold) {
  return Rng::stream(cfg.seed, stage, uint64_t(fold)).next_u64();
}

const SubjectRecord& subject_record(const DatasetManifest& manifest, const std::string& id) {
  const SubjectRecord* rec = manifest.find_subject(id);
  if (rec == nullptr) throw ValidationError("subject '" + id + "' not in manifest");
  return *rec;
}

Vae vae_from_file(const std::filesystem::path& path, Checkpoint* out_ck = nullptr) {
  Checkpoint ck = load_checkpoint(path);
  Vae vae = Vae::from_checkpoint(ck);
  if (out_ck != nullptr) *out_ck = std::move(ck);
  return vae;
}

// predictions grouped per subject, canonical event order inside each group
std::map<std::string, std::vector<Prediction>> by_subject(const std::vector<Prediction>& preds) {
  std::map<std::string, std::vector<Prediction>> out;
  for (const auto& p : preds) out[p.event.subject].push_back(p);
  for (auto& [subject, group] : out) {
    std::sort(group.begin(), group.end(), [](const Prediction& a, const Prediction& b) {
      return event_order_less(a.event, b.event);
    });
  }
  return out;
}

struct SubjectRr {
  std::string subject;
  double rr = 1.0;
  bool missing = false;
  int success = 0;
};

// RR per annotated, outcome-known subject; missing RR imputed as 1.0.
std::vector<SubjectRr> subject_rrs(const DatasetManifest& manifest,
                                   const std::vector<std::string>& subjects,
                                   const std::map<std::string, std::vector<Prediction>>& groups) {
  std::vector<SubjectRr> out;
  for (const auto& id : subjects) {
    const SubjectRecord& rec = subject_record(manifest, id);
    if (rec.outcome == Outcome::kUnknown || rec.resected_channels.empty()) continue;
    auto it = groups.find(id);
    if (it == groups.end()) continue;  // no events for this subject
    RrResult rr = resection_ratio(it->second, rec.resected_channels);
    out.push_back({id, rr.value, rr.missing, rec.outcome == Outcome::kSeizureFree ? 1 : 0});
  }
  return out;
}

}  // namespace

void PipelineConfig::validate() const {
  if (manifest_path.empty()) throw ValidationError("manifest path is required");
  if (work.empty()) throw ValidationError("work directory is required");
  if (kfolds < 2) throw ValidationError("fold count must be at least 2");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    throw ValidationError("val_fraction outside [0,1)");
  }
  if (window_ms <= 0.0) throw ValidationError("window_ms must be positive");
  if (!(tf.f_min > 0.0 && tf.f_min < tf.f_max)) throw ValidationError("bad transform band");
  if (tf.n_freqs < 2 || tf.out_size < 2) throw ValidationError("bad transform resolution");
  vae.validate();
  cls.validate();
  if (tf.out_size != vae.image) {
    throw ValidationError("transform out_size must equal the model image size");
  }
  if (sweep_steps < 2) throw ValidationError("sweep needs at least two steps");
  if (!(sweep_lo_q >= 0.0 && sweep_lo_q < sweep_hi_q && sweep_hi_q <= 1.0)) {
    throw ValidationError("bad sweep quantiles");
  }
  if (knockout_k < 1) throw ValidationError("knockout_k must be positive");
}

std::filesystem::path fold_dir(const PipelineConfig& cfg, int fold) {
  return cfg.work / ("fold_" + std::to_string(fold));
}

EventImageSet build_images(const DatasetManifest& manifest,
                           const std::vector<std::string>& subjects, double window_ms,
                           const TfConfig& tf) {
  std::set<std::string> wanted(subjects.begin(), subjects.end());
  for (const auto& id : subjects) (void)subject_record(manifest, id);

  EventImageSet set;
  for (const auto& event : manifest.events) {
    if (wanted.count(event.subject) != 0) set.events.push_back(event);
  }
  set.images.resize(set.events.size());

  WaveformStore store(manifest);
  std::vector<Window> windows(set.events.size());
  for (std::size_t i = 0; i < set.events.size(); ++i) {
    const auto& e = set.events[i];
    windows[i] = extract_window(store.get(e.subject, e.channel), e, window_ms);
  }

  // One Morlet plan per (window length, sample rate); windows of one length
  // share filters.
  std::map<std::pair<std::size_t, uint32_t>, MorletPlan> plans;
  std::vector<const MorletPlan*> plan_of(set.events.size(), nullptr);
  for (std::size_t i = 0; i < set.events.size(); ++i) {
    const auto& e = set.events[i];
    const uint32_t fs = store.get(e.subject, e.channel).sample_rate;
    const auto key = std::make_pair(windows[i].samples.size(), fs);
    auto it = plans.find(key);
    if (it == plans.end()) {
      it = plans.emplace(key, make_morlet_plan(key.first, double(fs), tf)).first;
    }
    plan_of[i] = &it->second;
  }

  const int threads = num_threads();
  const long n = long(set.events.size());
#pragma omp parallel for schedule(static) num_threads(threads) if (threads > 1 && n > 1)
  for (long i = 0; i < n; ++i) {
    set.images[std::size_t(i)] =
        plan_window_to_image(*plan_of[std::size_t(i)], windows[std::size_t(i)].samples, tf)
            .values;
  }

  for (std::size_t i = 0; i < set.events.size(); ++i) {
    set.by_subject[set.events[i].subject].push_back(i);
  }
  return set;
}

Tensor encode_all(const Vae& vae, const EventImageSet& data, std::size_t chunk) {
  const std::size_t n = data.size();
  const std::size_t latent = std::size_t(vae.config().latent_dim);
  Tensor mu({n, latent});
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < n; start += chunk) {
    rows.clear();
    for (std::size_t i = start; i < std::min(start + chunk, n); ++i) rows.push_back(i);
    Tensor part = vae.encode_mu(data.batch(rows));
    std::copy(part.data(), part.data() + part.size(), mu.data() + start * latent);
  }
  return mu;
}

void stage_ingest(const PipelineConfig& cfg) {
  cfg.validate();
  DatasetManifest manifest = load_manifest(cfg.manifest_path);
  std::vector<FoldSplit> folds = make_folds(manifest, cfg.kfolds, cfg.seed, cfg.val_fraction);
  std::filesystem::create_directories(cfg.work);

  json j;
  j["manifest"] = cfg.manifest_path.string();
  j["k"] = cfg.kfolds;
  j["seed"] = cfg.seed;
  j["val_fraction"] = cfg.val_fraction;
  j["folds"] = json::array();
  for (const auto& f : folds) {
    j["folds"].push_back(
        {{"fold", f.fold_id}, {"train", f.train}, {"val", f.val}, {"test", f.test}});
  }
  write_file_atomic(cfg.work / "folds.json", j.dump(2) + "\n");
  write_run_meta(cfg, "ingest");
}

std::vector<FoldSplit> load_folds(const std::filesystem::path& work) {
  const auto path = work / "folds.json";
  require_file(path, "fold table", "ingest");
  json j = parse_json_file(path, "fold table");
  std::vector<FoldSplit> out;
  try {
    for (const auto& f : j.at("folds")) {
      FoldSplit split;
      split.fold_id = f.at("fold").get<int>();
      split.train = f.at("train").get<std::vector<std::string>>();
      split.val = f.at("val").get<std::vector<std::string>>();
      split.test = f.at("test").get<std::vector<std::string>>();
      out.push_back(std::move(split));
    }
  } catch (const json::exception& e) {
    throw ValidationError("malformed fold table " + path.string() + ": " + e.what());
  }
  if (out.empty()) throw ValidationError("fold table " + path.string() + " has no folds");
  return out;
}

void stage_pretrain(const PipelineConfig& cfg, int fold) {
  cfg.validate();
  DatasetManifest manifest = load_manifest(cfg.manifest_path);
  FoldSplit split = find_fold(load_folds(cfg.work), fold);
  EventImageSet data =
      build_images(manifest, concat_sorted(split.train, split.val), cfg.window_ms, cfg.tf);

  VaeConfig vcfg = cfg.vae;
  vcfg.seed = seed_for(cfg, "pretrain", fold);
  const auto dir = fold_dir(cfg, fold);
  std::filesystem::create_directories(dir);
  pretrain(data, split.train, split.val, vcfg, dir / "vae.ckpt", dir / "pretrain_log.csv");
  write_run_meta(cfg, "pretrain");
}

std::vector<std::string> stage_discover(const PipelineConfig& cfg, int fold) {
  cfg.validate();
  DatasetManifest manifest = load_manifest(cfg.manifest_path);
  FoldSplit split = find_fold(load_folds(cfg.work), fold);
  const auto dir = fold_dir(cfg, fold);
  require_file(dir / "vae.ckpt", "model checkpoint", "pretrain");

  Checkpoint ck;
  Vae vae = vae_from_file(dir / "vae.ckpt", &ck);
  FeatureExtractor fx = FeatureExtractor::make(ck.fx_kind, ck.fx_seed, cfg.vae.fx_weights);
  EventImageSet data =
      build_images(manifest, concat_sorted(split.train, split.val), cfg.window_ms, cfg.tf);

  DiscoveryInput in;
  in.events = data.events;
  in.mu = encode_all(vae, data);
  in.recon_losses = per_event_reconstruction_loss(data, vae, fx);
  in.annotated.resize(data.size());
  in.resected.resize(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const SubjectRecord& rec = subject_record(manifest, data.events[i].subject);
    in.annotated[i] = rec.resected_channels.empty() ? 0 : 1;
    in.resected[i] = rec.resected_channels.count(data.events[i].channel) != 0 ? 1 : 0;
  }

  DiscoveryResult result = discover(in, seed_for(cfg, "discover", fold));
  save_weak_labels(dir / "weak_labels.csv", result.labels);
  write_run_meta(cfg, "discover");
  return result.notes;
}

void stage_train(const PipelineConfig& cfg, int fold) {
  cfg.validate();
  DatasetManifest manifest = load_manifest(cfg.manifest_path);
  FoldSplit split = find_fold(load_folds(cfg.work), fold);
  const auto dir = fold_dir(cfg, fold);
  require_file(dir / "vae.ckpt", "model checkpoint", "pretrain");
  require_file(dir / "weak_labels.csv", "weak label table", "discover");

  Checkpoint ck;
  Vae vae = vae_from_file(dir / "vae.ckpt", &ck);
  EventImageSet data = build_images(manifest, split.train, cfg.window_ms, cfg.tf);

  std::map<std::string, int> label_of;
  for (const auto& wl : load_weak_labels(dir / "weak_labels.csv")) {
    label_of[wl.event.id()] = wl.l;
  }
  std::vector<int> labels;
  labels.reserve(data.size());
  for (const auto& event : data.events) {
    auto it = label_of.find(event.id());
    if (it == label_of.end()) {
      throw ValidationError("weak labels do not cover event " + event.id() +
                            " (re-run the discover stage)");
    }
    labels.push_back(it->second);
  }

  ClassifierConfig ccfg = cfg.cls;
  ccfg.seed = seed_for(cfg, "train", fold);
  ClassifierResult result = train_classifier(data, labels, vae, ccfg);
  attach_classifier(ck, result.psi);
  save_checkpoint(dir / "classifier.ckpt", ck);
  write_train_log(dir / "train_log.csv", result.log);
  write_run_meta(cfg, "train");
}

void stage_evaluate(const PipelineConfig& cfg, int fold) {
  cfg.validate();
  DatasetManifest manifest = load_manifest(cfg.manifest_path);
  FoldSplit split = find_fold(load_folds(cfg.work), fold);
  const auto dir = fold_dir(cfg, fold);
  require_file(dir / "classifier.ckpt", "classifier checkpoint", "train");

  Checkpoint ck;
  Vae vae = vae_from_file(dir / "classifier.ckpt", &ck);
  ClassifierParams psi = classifier_from_checkpoint(ck);

  EventImageSet test_data = build_images(manifest, split.test, cfg.window_ms, cfg.tf);
  std::vector<Prediction> test_preds = predict(test_data, vae, psi, cfg.cls.threshold);
  save_predictions(dir / "predictions.csv", test_preds);

  EventImageSet fit_data =
      build_images(manifest, concat_sorted(split.train, split.val), cfg.window_ms, cfg.tf);
  std::vector<Prediction> fit_preds = predict(fit_data, vae, psi, cfg.cls.threshold);

  std::vector<SubjectRr> fit_rr =
      subject_rrs(manifest, concat_sorted(split.train, split.val), by_subject(fit_preds));
  if (fit_rr.empty()) {
    throw ValidationError("no outcome-annotated subjects in the train/val splits");
  }
  std::vector<double> xs;
  std::vector<int> ys;
  for (const auto& r : fit_rr) {
    xs.push_back(r.rr);
    ys.push_back(r.success);
  }
  OutcomeModel model = fit_outcome_model(xs, ys);

  CsvTable model_csv;
  model_csv.header = {"weight", "bias"};
  model_csv.rows.push_back({format_double(model.weight), format_double(model.bias)});
  write_csv(dir / "outcome_model.csv", model_csv);

  const auto test_groups = by_subject(test_preds);
  std::vector<SubjectRr> test_rr = subject_rrs(manifest, split.test, test_groups);
  if (test_rr.empty()) {
    throw ValidationError("no outcome-annotated subjects in the test split");
  }
  std::vector<int> predicted, truth;
  for (const auto& r : test_rr) {
    predicted.push_back(outcome_label(model, r.rr));
    truth.push_back(r.success);
  }
  AccF1 scores = accuracy_f1(predicted, truth);

  json spec_rows = json::array();
  json spec_excluded = json::array();
  std::vector<double> spec_values;
  for (const auto& id : split.test) {
    const SubjectRecord& rec = subject_record(manifest, id);
    if (rec.outcome != Outcome::kSeizureFree || rec.resected_channels.empty()) continue;
    auto it = test_groups.find(id);
    if (it == test_groups.end()) continue;
    std::optional<double> value = specificity(it->second, rec.resected_channels);
    if (value.has_value()) {
      spec_rows.push_back({{"subject", id}, {"specificity", *value}});
      spec_values.push_back(*value);
    } else {
      spec_excluded.push_back(id);
    }
  }

  json j;
  j["fold"] = fold;
  j["n_test_events"] = test_preds.size();
  j["acc"] = scores.acc;
  j["f1"] = scores.f1;
  j["f1_degenerate"] = scores.f1_degenerate;
  j["outcome_model"] = {{"weight", model.weight},
                        {"bias", model.bias},
                        {"iterations", model.iterations},
                        {"grad_norm", model.grad_norm},
                        {"converged", model.converged}};
  json rr_rows = json::array();
  json rr_imputed = json::array();
  for (const auto& r : test_rr) {
    rr_rows.push_back({{"subject", r.subject},
                       {"rr", r.rr},
                       {"imputed", r.missing},
                       {"outcome", r.success == 1 ? "seizure_free" : "not_seizure_free"}});
    if (r.missing) rr_imputed.push_back(r.subject);
  }
  j["rr"] = rr_rows;
  j["rr_imputed"] = rr_imputed;
  j["specificity"] = spec_rows;
  j["specificity_excluded"] = spec_excluded;
  if (!spec_values.empty()) j["spec_mean"] = mean_std(spec_values).mean;
  write_file_atomic(dir / "fold_metrics.json", j.dump(2) + "\n");
  write_run_meta(cfg, "evaluate");
}

namespace {

struct LatentScope {
  EventImageSet data;
  Tensor codes;
  std::vector<double> probabilities;
  std::vector<int> labels;
};

// test-split latents aligned with stored predictions
LatentScope latent_scope(const PipelineConfig& cfg, int fold, const Vae& vae) {
  DatasetManifest manifest = load_manifest(cfg.manifest_path);
  FoldSplit split = find_fold(load_folds(cfg.work), fold);
  const auto dir = fold_dir(cfg, fold);
  require_file(dir / "predictions.csv", "prediction table", "evaluate");

  LatentScope scope;
  scope.data = build_images(manifest, split.test, cfg.window_ms, cfg.tf);
  scope.codes = encode_all(vae, scope.data);

  std::map<std::string, std::pair<double, int>> by_id;
  for (const auto& p : load_predictions(dir / "predictions.csv")) {
    by_id[p.event.id()] = {p.probability, p.label};
  }
  for (const auto& event : scope.data.events) {
    auto it = by_id.find(event.id());
    if (it == by_id.end()) {
      throw ValidationError("predictions do not cover event " + event.id() +
                            " (re-run the evaluate stage)");
    }
    scope.probabilities.push_back(it->second.first);
    scope.labels.push_back(it->second.second);
  }
  return scope;
}

}  // namespace

void stage_sweep(const PipelineConfig& cfg, int fold) {
  cfg.validate();
  const auto dir = fold_dir(cfg, fold);
  require_file(dir / "classifier.ckpt", "classifier checkpoint", "train");
  Vae vae = vae_from_file(dir / "classifier.ckpt");
  LatentScope scope = latent_scope(cfg, fold, vae);

  const std::size_t latent = scope.codes.dim(1);
  std::vector<double> seed_code(latent, 0.0);
  std::size_t n_path = 0;
  for (std::size_t i = 0; i < scope.labels.size(); ++i) {
    if (scope.labels[i] != 1) continue;
    ++n_path;
    for (std::size_t j = 0; j < latent; ++j) seed_code[j] += scope.codes[i * latent + j];
  }
  if (n_path == 0) {
    throw ValidationError("no pathological predictions in fold " + std::to_string(fold) +
                          "; sweep seed undefined");
  }
  for (double& v : seed_code) v /= double(n_path);

  render_sweeps(dir / "latent", vae, scope.codes, seed_code, cfg.sweep_steps, cfg.sweep_lo_q,
                cfg.sweep_hi_q);
  write_run_meta(cfg, "sweep");
}

void stage_knockout(const PipelineConfig& cfg, int fold) {
  cfg.validate();
  const auto dir = fold_dir(cfg, fold);
  require_file(dir / "classifier.ckpt", "classifier checkpoint", "train");
  Vae vae = vae_from_file(dir / "classifier.ckpt");
  LatentScope scope = latent_scope(cfg, fold, vae);

  std::vector<std::string> ids;
  ids.reserve(scope.data.size());
  for (const auto& event : scope.data.events) ids.push_back(event.id());
  render_knockouts(dir / "latent", scope.codes, ids, scope.probabilities, scope.labels,
                   cfg.knockout_k);
  write_run_meta(cfg, "knockout");
}

void stage_report(const PipelineConfig& cfg) {
  cfg.validate();
  std::vector<FoldSplit> folds = load_folds(cfg.work);

  json report;
  report["k"] = folds.size();
  report["seed"] = cfg.seed;
  json fold_array = json::array();
  std::vector<double> accs, f1s;
  std::vector<double> spec_values;
  json spec_table = json::array();
  json spec_excluded = json::array();
  json rr_table = json::array();
  json rr_imputed = json::array();
  bool any_degenerate = false;

  for (const auto& split : folds) {
    const auto path = fold_dir(cfg, split.fold_id) / "fold_metrics.json";
    require_file(path, "fold metrics", "evaluate");
    json fm = parse_json_file(path, "fold metrics");
    try {
      accs.push_back(fm.at("acc").get<double>());
      f1s.push_back(fm.at("f1").get<double>());
      any_degenerate = any_degenerate || fm.at("f1_degenerate").get<bool>();
      for (const auto& row : fm.at("specificity")) {
        spec_table.push_back(row);
        spec_values.push_back(row.at("specificity").get<double>());
      }
      for (const auto& id : fm.at("specificity_excluded")) spec_excluded.push_back(id);
      for (const auto& row : fm.at("rr")) rr_table.push_back(row);
      for (const auto& id : fm.at("rr_imputed")) rr_imputed.push_back(id);
    } catch (const json::exception& e) {
      throw ValidationError("malformed fold metrics " + path.string() + ": " + e.what());
    }
    fold_array.push_back(std::move(fm));
  }

  report["folds"] = std::move(fold_array);
  const MeanStd acc = mean_std(accs);
  const MeanStd f1 = mean_std(f1s);
  report["acc_mean"] = acc.mean;
  report["acc_std"] = acc.std;
  report["f1_mean"] = f1.mean;
  report["f1_std"] = f1.std;
  report["f1_degenerate_any"] = any_degenerate;
  report["specificity"] = spec_table;
  report["specificity_excluded"] = spec_excluded;
  if (!spec_values.empty()) {
    report["spec_mean"] = mean_std(spec_values).mean;
    report["spec_subjects"] = spec_values.size();
  }
  report["rr"] = rr_table;
  report["rr_imputed"] = rr_imputed;
  write_file_atomic(cfg.work / "report.json", report.dump(2) + "\n");

  std::string md;
  md += "# Pipeline report\n\n";
  md += "Folds: " + std::to_string(folds.size()) + "\n\n";
  md += "| metric | mean | std |\n|---|---|---|\n";
  md += "| outcome ACC | " + format_double(acc.mean) + " | " + format_double(acc.std) + " |\n";
  md += "| outcome F1 | " + format_double(f1.mean) + " | " + format_double(f1.std) + " |\n";
  if (!spec_values.empty()) {
    md += "| specificity (mean over " + std::to_string(spec_values.size()) + " subjects) | " +
          format_double(mean_std(spec_values).mean) + " | |\n";
  }
  md += "\nPer-fold outcome metrics:\n\n| fold | ACC | F1 |\n|---|---|---|\n";
  for (std::size_t i = 0; i < folds.size(); ++i) {
    md += "| " + std::to_string(folds[i].fold_id) + " | " + format_double(accs[i]) + " | " +
          format_double(f1s[i]) + " |\n";
  }
  if (!rr_imputed.empty()) {
    md += "\nSubjects with no pathological predictions (RR imputed as 1): ";
    for (std::size_t i = 0; i < rr_imputed.size(); ++i) {
      if (i != 0) md += ", ";
      md += rr_imputed[i].get<std::string>();
    }
    md += "\n";
  }
  if (!spec_excluded.empty()) {
    md += "\nSuccess subjects without preserved-region events (excluded from SPEC): ";
    for (std::size_t i = 0; i < spec_excluded.size(); ++i) {
      if (i != 0) md += ", ";
      md += spec_excluded[i].get<std::string>();
    }
    md += "\n";
  }
  if (any_degenerate) {
    md += "\nAt least one fold had no positive outcomes in truth or prediction; its F1 was "
          "reported as 0.\n";
  }
  write_file_atomic(cfg.work / "report.md", md);
  write_run_meta(cfg, "report");
}

void write_run_meta(const PipelineConfig& cfg, const std::string& stage) {
  const auto path = cfg.work / "run_meta.json";
  json meta;
  if (std::filesystem::exists(path)) {
    meta = json::parse(read_file(path), nullptr, false);
    if (meta.is_discarded()) meta = json::object();
  }
  meta["version"] = 1;
  meta["seed"] = cfg.seed;
  const std::string dump = config_to_json(cfg).dump();
  char hash_hex[17];
  std::snprintf(hash_hex, sizeof hash_hex, "%016llx",
                static_cast<unsigned long long>(Rng::hash_str(dump)));
  meta["config_hash"] = std::string(hash_hex);
  std::set<std::string> stages;
  if (meta.contains("stages") && meta["stages"].is_array()) {
    for (const auto& s : meta["stages"]) {
      if (s.is_string()) stages.insert(s.get<std::string>());
    }
  }
  stages.insert(stage);
  meta["stages"] = stages;
  std::filesystem::create_directories(cfg.work);
  write_file_atomic(path, meta.dump(2) + "\n");
}

}  // namespace hfo
