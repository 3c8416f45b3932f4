#include <algorithm>
#include <cstdio>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hfo/common.hpp"
#include "hfo/csvio.hpp"
#include "hfo/pipeline.hpp"
#include "hfo/synth.hpp"

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::vector<std::string>& allowed,
                const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw hfo::ValidationError("unknown config key '" + key + "' in " + where);
    }
  }
}

// Config file values replace defaults; command-line flags override both.
void apply_config_file(const std::string& path, hfo::PipelineConfig& cfg) {
  json j = json::parse(hfo::read_file(path), nullptr, false);
  if (j.is_discarded()) throw hfo::ValidationError("malformed config file: " + path);
  try {
    check_keys(j, {"manifest", "work", "seed", "kfolds", "val_fraction", "window_ms", "tf", "vae",
                   "classifier", "sweep", "knockout_k"},
               path);
    if (j.contains("manifest")) cfg.manifest_path = j["manifest"].get<std::string>();
    if (j.contains("work")) cfg.work = j["work"].get<std::string>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
    if (j.contains("kfolds")) cfg.kfolds = j["kfolds"].get<int>();
    if (j.contains("val_fraction")) cfg.val_fraction = j["val_fraction"].get<double>();
    if (j.contains("window_ms")) cfg.window_ms = j["window_ms"].get<double>();
    if (j.contains("tf")) {
      const json& t = j["tf"];
      check_keys(t, {"f_min", "f_max", "n_freqs", "out_size"}, path + ":tf");
      if (t.contains("f_min")) cfg.tf.f_min = t["f_min"].get<double>();
      if (t.contains("f_max")) cfg.tf.f_max = t["f_max"].get<double>();
      if (t.contains("n_freqs")) cfg.tf.n_freqs = t["n_freqs"].get<int>();
      if (t.contains("out_size")) cfg.tf.out_size = t["out_size"].get<int>();
    }
    if (j.contains("vae")) {
      const json& v = j["vae"];
      check_keys(v,
                 {"latent_dim", "image", "channels", "lr", "weight_decay", "beta_init", "beta_lr",
                  "epochs", "batch", "subject_cap", "fx_seed", "fx_kind", "fx_weights"},
                 path + ":vae");
      if (v.contains("latent_dim")) cfg.vae.latent_dim = v["latent_dim"].get<int>();
      if (v.contains("image")) cfg.vae.image = v["image"].get<int>();
      if (v.contains("channels")) cfg.vae.channels = v["channels"].get<std::vector<int>>();
      if (v.contains("lr")) cfg.vae.lr = v["lr"].get<double>();
      if (v.contains("weight_decay")) cfg.vae.weight_decay = v["weight_decay"].get<double>();
      if (v.contains("beta_init")) cfg.vae.beta_init = v["beta_init"].get<double>();
      if (v.contains("beta_lr")) cfg.vae.beta_lr = v["beta_lr"].get<double>();
      if (v.contains("epochs")) cfg.vae.epochs = v["epochs"].get<int>();
      if (v.contains("batch")) cfg.vae.batch = v["batch"].get<int>();
      if (v.contains("subject_cap")) cfg.vae.subject_cap = v["subject_cap"].get<int>();
      if (v.contains("fx_seed")) cfg.vae.fx_seed = v["fx_seed"].get<uint64_t>();
      if (v.contains("fx_kind")) cfg.vae.fx_kind = v["fx_kind"].get<std::string>();
      if (v.contains("fx_weights")) cfg.vae.fx_weights = v["fx_weights"].get<std::string>();
    }
    if (j.contains("classifier")) {
      const json& c = j["classifier"];
      check_keys(c, {"lr", "weight_decay", "batch", "epochs", "augment", "threshold", "hidden"},
                 path + ":classifier");
      if (c.contains("lr")) cfg.cls.lr = c["lr"].get<double>();
      if (c.contains("weight_decay")) cfg.cls.weight_decay = c["weight_decay"].get<double>();
      if (c.contains("batch")) cfg.cls.batch = c["batch"].get<int>();
      if (c.contains("epochs")) cfg.cls.epochs = c["epochs"].get<int>();
      if (c.contains("augment")) cfg.cls.augment = c["augment"].get<bool>();
      if (c.contains("threshold")) cfg.cls.threshold = c["threshold"].get<double>();
      if (c.contains("hidden")) cfg.cls.hidden = c["hidden"].get<int>();
    }
    if (j.contains("sweep")) {
      const json& s = j["sweep"];
      check_keys(s, {"steps", "lo_q", "hi_q"}, path + ":sweep");
      if (s.contains("steps")) cfg.sweep_steps = s["steps"].get<int>();
      if (s.contains("lo_q")) cfg.sweep_lo_q = s["lo_q"].get<double>();
      if (s.contains("hi_q")) cfg.sweep_hi_q = s["hi_q"].get<double>();
    }
    if (j.contains("knockout_k")) cfg.knockout_k = j["knockout_k"].get<int>();
  } catch (const json::exception& e) {
    throw hfo::ValidationError("bad value in config file " + path + ": " + e.what());
  }
}

struct Cli {
  CLI::App app{"hfodistill: distills pathological HFO events out of legacy detector output"};

  std::string config_file;
  hfo::PipelineConfig cfg;
  int fold = 0;
  int threads = int(std::thread::hardware_concurrency());
  bool reference_mode = false;

  hfo::SynthConfig synth;
  std::string synth_out;
  std::vector<double> synth_mix = {0.3, 0.4, 0.3};
  CLI::Option* o_mix = nullptr;

  // option handles needed for override precedence
  CLI::Option* o_manifest = nullptr;
  CLI::Option* o_work = nullptr;
  CLI::Option* o_seed = nullptr;
  CLI::Option* o_kfolds = nullptr;
  CLI::Option* o_val_fraction = nullptr;
  CLI::Option* o_window = nullptr;
  CLI::Option* o_fmin = nullptr;
  CLI::Option* o_fmax = nullptr;
  CLI::Option* o_nfreqs = nullptr;
  CLI::Option* o_outsize = nullptr;
  CLI::Option* o_latent = nullptr;
  CLI::Option* o_image = nullptr;
  CLI::Option* o_channels = nullptr;
  CLI::Option* o_vae_lr = nullptr;
  CLI::Option* o_vae_wd = nullptr;
  CLI::Option* o_beta_init = nullptr;
  CLI::Option* o_beta_lr = nullptr;
  CLI::Option* o_vae_epochs = nullptr;
  CLI::Option* o_vae_batch = nullptr;
  CLI::Option* o_cap = nullptr;
  CLI::Option* o_fx_kind = nullptr;
  CLI::Option* o_fx_seed = nullptr;
  CLI::Option* o_fx_weights = nullptr;
  CLI::Option* o_cls_lr = nullptr;
  CLI::Option* o_cls_wd = nullptr;
  CLI::Option* o_cls_batch = nullptr;
  CLI::Option* o_cls_epochs = nullptr;
  CLI::Option* o_augment = nullptr;
  CLI::Option* o_threshold = nullptr;
  CLI::Option* o_hidden = nullptr;
  CLI::Option* o_sweep_steps = nullptr;
  CLI::Option* o_sweep_lo = nullptr;
  CLI::Option* o_sweep_hi = nullptr;
  CLI::Option* o_knn = nullptr;

  // flag destinations; copied into cfg only when the flag was given
  std::string manifest, work;
  uint64_t seed = 1;
  int kfolds = 5;
  double val_fraction = 0.2;
  double window_ms = 570.0;
  double f_min = 10.0, f_max = 290.0;
  int n_freqs = 64, out_size = 64;
  int latent_dim = 16, image = 64;
  std::vector<int> channels = {16, 32, 64, 128};
  double vae_lr = 1e-3, vae_wd = 1e-5, beta_init = 1.0, beta_lr = 1e-4;
  int vae_epochs = 100, vae_batch = 512, subject_cap = 2500;
  std::string fx_kind = "random", fx_weights;
  uint64_t fx_seed = 77;
  double cls_lr = 3e-4, cls_wd = 1e-5;
  int cls_batch = 4096, cls_epochs = 9;
  bool augment = true;
  double threshold = 0.5;
  int hidden = 0;
  int sweep_steps = 8;
  double sweep_lo = 0.001, sweep_hi = 0.999;
  int knn = 10;

  CLI::App* s_synth = nullptr;
  CLI::App* s_ingest = nullptr;
  CLI::App* s_pretrain = nullptr;
  CLI::App* s_discover = nullptr;
  CLI::App* s_train = nullptr;
  CLI::App* s_evaluate = nullptr;
  CLI::App* s_sweep = nullptr;
  CLI::App* s_knockout = nullptr;
  CLI::App* s_report = nullptr;
};

void build_cli(Cli& c) {
  c.app.fallthrough();
  c.app.require_subcommand(1);

  c.app.add_option("--config", c.config_file, "JSON config file; flags override its values");
  c.o_manifest = c.app.add_option("--manifest", c.manifest, "dataset manifest (manifest.json)");
  c.o_work = c.app.add_option("--work", c.work, "work directory for stage artifacts");
  c.o_seed = c.app.add_option("--seed", c.seed, "master seed for all stochastic steps")
                 ->capture_default_str();
  c.app.add_option("--threads", c.threads,
                   "worker threads for heavy kernels; results are deterministic per fixed value")
      ->capture_default_str();
  c.app.add_flag("--reference-mode", c.reference_mode,
                 "single-threaded deterministic path (forces --threads 1)");
  c.app.add_option("--fold", c.fold, "fold index for per-fold stages")->capture_default_str();

  c.o_kfolds = c.app.add_option("--kfolds", c.kfolds, "cross-validation fold count")
                   ->capture_default_str();
  c.o_val_fraction =
      c.app.add_option("--val-fraction", c.val_fraction,
                       "share of each fold's non-test subjects used for validation")
          ->capture_default_str();
  c.o_window = c.app.add_option("--window-ms", c.window_ms, "event window length in ms")
                   ->capture_default_str();
  c.o_fmin = c.app.add_option("--f-min", c.f_min, "lowest scalogram frequency in Hz")
                 ->capture_default_str();
  c.o_fmax = c.app.add_option("--f-max", c.f_max, "highest scalogram frequency in Hz")
                 ->capture_default_str();
  c.o_nfreqs =
      c.app.add_option("--n-freqs", c.n_freqs, "log-spaced frequency rows before resizing")
          ->capture_default_str();
  c.o_outsize = c.app.add_option("--image-size", c.out_size, "square scalogram side in pixels")
                    ->capture_default_str();

  c.o_latent = c.app.add_option("--latent-dim", c.latent_dim, "latent dimensionality")
                   ->capture_default_str();
  c.o_image = c.app.add_option("--model-image", c.image,
                               "image size the model expects (must match --image-size)")
                  ->capture_default_str();
  c.o_channels = c.app
                     .add_option("--channels", c.channels,
                                 "encoder stage channel counts, comma separated")
                     ->delimiter(',')
                     ->capture_default_str();
  c.o_vae_lr =
      c.app.add_option("--vae-lr", c.vae_lr, "pre-training learning rate")->capture_default_str();
  c.o_vae_wd = c.app.add_option("--vae-weight-decay", c.vae_wd, "pre-training weight decay")
                   ->capture_default_str();
  c.o_beta_init = c.app.add_option("--beta-init", c.beta_init, "initial loss-balance beta")
                      ->capture_default_str();
  c.o_beta_lr = c.app.add_option("--beta-lr", c.beta_lr, "beta adaptation rate")
                    ->capture_default_str();
  c.o_vae_epochs = c.app.add_option("--vae-epochs", c.vae_epochs, "pre-training epochs")
                       ->capture_default_str();
  c.o_vae_batch = c.app.add_option("--vae-batch", c.vae_batch, "pre-training batch size")
                      ->capture_default_str();
  c.o_cap = c.app.add_option("--subject-cap", c.subject_cap,
                             "training events drawn per subject per epoch")
                ->capture_default_str();
  c.o_fx_kind = c.app.add_option("--fx-kind", c.fx_kind,
                                 "perceptual feature extractor: random | identity | external")
                    ->capture_default_str();
  c.o_fx_seed = c.app.add_option("--fx-seed", c.fx_seed, "seed for the random feature extractor")
                    ->capture_default_str();
  c.o_fx_weights =
      c.app.add_option("--fx-weights", c.fx_weights, "weights file for --fx-kind external");

  c.o_cls_lr = c.app.add_option("--cls-lr", c.cls_lr, "classifier learning rate")
                   ->capture_default_str();
  c.o_cls_wd = c.app.add_option("--cls-weight-decay", c.cls_wd, "classifier weight decay")
                   ->capture_default_str();
  c.o_cls_batch = c.app.add_option("--cls-batch", c.cls_batch, "classifier batch size")
                      ->capture_default_str();
  c.o_cls_epochs = c.app.add_option("--cls-epochs", c.cls_epochs, "classifier epochs")
                       ->capture_default_str();
  c.o_augment = c.app.add_flag("--augment,!--no-augment", c.augment,
                               "train on surrogate latents as well (disable for the SD-only "
                               "ablation)")
                    ->capture_default_str();
  c.o_threshold = c.app.add_option("--threshold", c.threshold,
                                   "probability above which an event is called pathological")
                      ->capture_default_str();
  c.o_hidden = c.app.add_option("--hidden", c.hidden,
                                "classifier hidden width; 0 means twice the latent dimension")
                   ->capture_default_str();

  c.o_sweep_steps = c.app.add_option("--sweep-steps", c.sweep_steps, "images per latent sweep")
                        ->capture_default_str();
  c.o_sweep_lo = c.app.add_option("--sweep-lo-q", c.sweep_lo, "lower sweep quantile")
                     ->capture_default_str();
  c.o_sweep_hi = c.app.add_option("--sweep-hi-q", c.sweep_hi, "upper sweep quantile")
                     ->capture_default_str();
  c.o_knn = c.app.add_option("--knockout-k", c.knn, "neighbors for the knockout mixing score")
                ->capture_default_str();

  c.s_synth = c.app.add_subcommand("synth", "generate a synthetic dataset");
  c.s_synth->add_option("--out", c.synth_out, "output directory")->required();
  c.s_synth->add_option("--subjects", c.synth.n_subjects, "subject count")
      ->capture_default_str();
  c.s_synth->add_option("--events-per-subject", c.synth.events_per_subject, "events per subject")
      ->capture_default_str();
  c.s_synth
      ->add_option("--channels-per-subject", c.synth.channels_per_subject,
                   "channels per subject")
      ->capture_default_str();
  c.s_synth->add_option("--sample-rate", c.synth.sample_rate, "sampling rate in Hz")
      ->capture_default_str();
  c.o_mix = c.s_synth
                ->add_option("--class-mix", c.synth_mix,
                             "pathological,physiological,noise proportions")
                ->delimiter(',')
                ->expected(3)
                ->capture_default_str();
  c.s_synth->add_option("--snr-db", c.synth.snr_db, "burst amplitude over the noise floor in dB")
      ->capture_default_str();
  c.s_synth
      ->add_option("--coverage", c.synth.resection_coverage,
                   "fraction of a success subject's pathological events placed in resected "
                   "channels")
      ->capture_default_str();

  c.s_ingest = c.app.add_subcommand("ingest", "validate the manifest and build the fold table");
  c.s_pretrain = c.app.add_subcommand("pretrain", "train the reconstruction model for one fold");
  c.s_discover = c.app.add_subcommand("discover", "cluster latents into weak labels for one fold");
  c.s_train = c.app.add_subcommand("train", "train the classifier head for one fold");
  c.s_evaluate = c.app.add_subcommand("evaluate", "predict the test split and score one fold");
  c.s_sweep = c.app.add_subcommand("sweep", "decode per-dimension latent sweeps for one fold");
  c.s_knockout = c.app.add_subcommand("knockout",
                                      "zero latent dimensions and measure prediction mixing");
  c.s_report = c.app.add_subcommand("report", "aggregate fold metrics into report.json/report.md");
}

// flags > config file > defaults
void assemble_config(Cli& c) {
  if (!c.config_file.empty()) apply_config_file(c.config_file, c.cfg);
  if (c.o_manifest->count() != 0u) c.cfg.manifest_path = c.manifest;
  if (c.o_work->count() != 0u) c.cfg.work = c.work;
  if (c.o_seed->count() != 0u) c.cfg.seed = c.seed;
  if (c.o_kfolds->count() != 0u) c.cfg.kfolds = c.kfolds;
  if (c.o_val_fraction->count() != 0u) c.cfg.val_fraction = c.val_fraction;
  if (c.o_window->count() != 0u) c.cfg.window_ms = c.window_ms;
  if (c.o_fmin->count() != 0u) c.cfg.tf.f_min = c.f_min;
  if (c.o_fmax->count() != 0u) c.cfg.tf.f_max = c.f_max;
  if (c.o_nfreqs->count() != 0u) c.cfg.tf.n_freqs = c.n_freqs;
  if (c.o_outsize->count() != 0u) {
    c.cfg.tf.out_size = c.out_size;
    if (c.o_image->count() == 0u) c.cfg.vae.image = c.out_size;
  }
  if (c.o_latent->count() != 0u) c.cfg.vae.latent_dim = c.latent_dim;
  if (c.o_image->count() != 0u) c.cfg.vae.image = c.image;
  if (c.o_channels->count() != 0u) c.cfg.vae.channels = c.channels;
  if (c.o_vae_lr->count() != 0u) c.cfg.vae.lr = c.vae_lr;
  if (c.o_vae_wd->count() != 0u) c.cfg.vae.weight_decay = c.vae_wd;
  if (c.o_beta_init->count() != 0u) c.cfg.vae.beta_init = c.beta_init;
  if (c.o_beta_lr->count() != 0u) c.cfg.vae.beta_lr = c.beta_lr;
  if (c.o_vae_epochs->count() != 0u) c.cfg.vae.epochs = c.vae_epochs;
  if (c.o_vae_batch->count() != 0u) c.cfg.vae.batch = c.vae_batch;
  if (c.o_cap->count() != 0u) c.cfg.vae.subject_cap = c.subject_cap;
  if (c.o_fx_kind->count() != 0u) c.cfg.vae.fx_kind = c.fx_kind;
  if (c.o_fx_seed->count() != 0u) c.cfg.vae.fx_seed = c.fx_seed;
  if (c.o_fx_weights->count() != 0u) c.cfg.vae.fx_weights = c.fx_weights;
  if (c.o_cls_lr->count() != 0u) c.cfg.cls.lr = c.cls_lr;
  if (c.o_cls_wd->count() != 0u) c.cfg.cls.weight_decay = c.cls_wd;
  if (c.o_cls_batch->count() != 0u) c.cfg.cls.batch = c.cls_batch;
  if (c.o_cls_epochs->count() != 0u) c.cfg.cls.epochs = c.cls_epochs;
  if (c.o_augment->count() != 0u) c.cfg.cls.augment = c.augment;
  if (c.o_threshold->count() != 0u) c.cfg.cls.threshold = c.threshold;
  if (c.o_hidden->count() != 0u) c.cfg.cls.hidden = c.hidden;
  if (c.o_sweep_steps->count() != 0u) c.cfg.sweep_steps = c.sweep_steps;
  if (c.o_sweep_lo->count() != 0u) c.cfg.sweep_lo_q = c.sweep_lo;
  if (c.o_sweep_hi->count() != 0u) c.cfg.sweep_hi_q = c.sweep_hi;
  if (c.o_knn->count() != 0u) c.cfg.knockout_k = c.knn;
}

int run(Cli& c) {
  hfo::set_num_threads(c.reference_mode ? 1 : std::max(1, c.threads));

  if (c.s_synth->parsed()) {
    c.synth.seed = c.o_seed->count() != 0u ? c.seed : c.synth.seed;
    if (c.o_mix->count() != 0u) {
      std::copy(c.synth_mix.begin(), c.synth_mix.end(), c.synth.class_mix.begin());
    }
    hfo::SynthDataset ds = hfo::generate_dataset(c.synth);
    const auto manifest = hfo::write_synth_dataset(c.synth_out, ds);
    std::cout << "wrote " << manifest.string() << "\n";
    return 0;
  }

  assemble_config(c);
  if (c.s_ingest->parsed()) {
    hfo::stage_ingest(c.cfg);
    std::cout << "wrote " << (c.cfg.work / "folds.json").string() << "\n";
  } else if (c.s_pretrain->parsed()) {
    hfo::stage_pretrain(c.cfg, c.fold);
    std::cout << "wrote " << (hfo::fold_dir(c.cfg, c.fold) / "vae.ckpt").string() << "\n";
  } else if (c.s_discover->parsed()) {
    for (const auto& note : hfo::stage_discover(c.cfg, c.fold)) {
      std::cerr << "note: " << note << "\n";
    }
    std::cout << "wrote " << (hfo::fold_dir(c.cfg, c.fold) / "weak_labels.csv").string() << "\n";
  } else if (c.s_train->parsed()) {
    hfo::stage_train(c.cfg, c.fold);
    std::cout << "wrote " << (hfo::fold_dir(c.cfg, c.fold) / "classifier.ckpt").string() << "\n";
  } else if (c.s_evaluate->parsed()) {
    hfo::stage_evaluate(c.cfg, c.fold);
    std::cout << "wrote " << (hfo::fold_dir(c.cfg, c.fold) / "fold_metrics.json").string()
              << "\n";
  } else if (c.s_sweep->parsed()) {
    hfo::stage_sweep(c.cfg, c.fold);
    std::cout << "wrote " << (hfo::fold_dir(c.cfg, c.fold) / "latent" / "sweeps").string()
              << "\n";
  } else if (c.s_knockout->parsed()) {
    hfo::stage_knockout(c.cfg, c.fold);
    std::cout << "wrote " << (hfo::fold_dir(c.cfg, c.fold) / "latent" / "knockout").string()
              << "\n";
  } else if (c.s_report->parsed()) {
    hfo::stage_report(c.cfg);
    std::cout << "wrote " << (c.cfg.work / "report.json").string() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  Cli c;
  build_cli(c);
  try {
    c.app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return c.app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return c.app.exit(e);
  } catch (const CLI::ParseError& e) {
    c.app.exit(e);
    return 1;
  }
  try {
    return run(c);
  } catch (const hfo::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const hfo::PipelineError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
