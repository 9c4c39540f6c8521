// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The flimrnn Authors
//
// Command-line front end: simulate, train, eval, bench, crlb, quantize,
// pipeline, verify.

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "flim/benchmark.hpp"
#include "flim/crlb.hpp"
#include "flim/error.hpp"
#include "flim/estimators.hpp"
#include "flim/hash.hpp"
#include "flim/io.hpp"
#include "flim/parallel.hpp"
#include "flim/pipeline.hpp"
#include "flim/quant.hpp"
#include "flim/trainer.hpp"

namespace {

using namespace flim;

// Writes the subcommand's effective options (file values overridden by
// flags) plus input hashes next to an output.
void write_manifest(const fs::path& path, const CLI::App& sub,
                    const std::vector<std::pair<std::string, std::string>>& provenance) {
  std::ostringstream os;
  // Replay with: flimrnn --config <file> <subcommand> [overrides]
  os << "# flimrnn " << sub.get_name() << " effective configuration\n";
  os << '[' << sub.get_name() << "]\n";
  os << sub.config_to_str(true, false);
  if (!provenance.empty()) {
    os << "\n[provenance]\n";
    for (const auto& [k, v] : provenance) os << k << " = \"" << v << "\"\n";
  }
  write_file(path, os.str());
}

fs::path sibling(const fs::path& out, const std::string& suffix) {
  fs::path p = out;
  p += suffix;
  return p;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "'");
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string scale = "desk";
  std::size_t samples = 0;
  std::size_t photons = 0;
  double tau_min = 0.2, tau_max = 5.0;
  double bg_min = 0.0, bg_max = 0.0;
  double t0_min = 0.0, t0_max = 5.0;
  double period = 50.0;
  double fwhm = 0.1673;
  double tdc_bin = 0.0;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  std::string out;
  std::string csv;
};

void add_simulate(CLI::App& app, SimulateArgs& a) {
  auto* s = app.add_subcommand("simulate", "Generate a synthetic timestamp dataset");
  s->add_option("--scale", a.scale, "Preset: desk (50k x 256) or paper (500k x 1024)")
      ->check(CLI::IsMember({"desk", "paper"}))
      ->capture_default_str();
  s->add_option("--samples", a.samples, "Number of samples (overrides the preset)");
  s->add_option("--photons", a.photons, "Photons per sample (overrides the preset)");
  s->add_option("--tau-min", a.tau_min, "Smallest lifetime (ns)")->capture_default_str();
  s->add_option("--tau-max", a.tau_max, "Largest lifetime (ns)")->capture_default_str();
  s->add_option("--bg-min", a.bg_min, "Smallest background fraction")->capture_default_str();
  s->add_option("--bg-max", a.bg_max, "Largest background fraction")->capture_default_str();
  s->add_option("--t0-min", a.t0_min, "Smallest IRF peak (ns)")->capture_default_str();
  s->add_option("--t0-max", a.t0_max, "Largest IRF peak (ns)")->capture_default_str();
  s->add_option("--period", a.period, "Repetition period (ns)")->capture_default_str();
  s->add_option("--fwhm", a.fwhm, "IRF full width at half maximum (ns)")->capture_default_str();
  s->add_option("--tdc-bin", a.tdc_bin, "TDC bin (ns); 0 keeps continuous times")
      ->capture_default_str();
  s->add_option("--seed", a.seed, "Master seed")->capture_default_str();
  s->add_option("--threads", a.threads, "Worker threads")->capture_default_str();
  s->add_option("--out", a.out, "Dataset file")->required();
  s->add_option("--csv", a.csv, "Also export photons as CSV (sample_id,timestamp_ns)");
}

int run_simulate(const CLI::App& sub, const SimulateArgs& a) {
  DatasetConfig c = a.scale == "paper" ? DatasetConfig::paper_scale() : DatasetConfig::desk_scale();
  if (a.samples) c.samples = a.samples;
  if (a.photons) c.photons = a.photons;
  c.lifetime = {a.tau_min, a.tau_max};
  c.background = {a.bg_min, a.bg_max};
  c.irf_peak = {a.t0_min, a.t0_max};
  c.period = a.period;
  c.irf_fwhm = a.fwhm;
  c.tdc_bin = a.tdc_bin;
  c.seed = a.seed;
  c.validate();
  const Dataset d = generate_dataset(c, a.threads);
  const std::string bytes = serialize_dataset(d);
  write_file(a.out, bytes);
  if (!a.csv.empty()) write_file(a.csv, dataset_to_csv(d));
  write_manifest(sibling(a.out, ".config.toml"), sub, {{"dataset_sha256", dataset_hash(d)}});
  std::cout << "wrote " << c.samples << " samples x " << c.photons << " photons to " << a.out
            << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string dataset;
  std::string variant = "gru";
  std::size_t hidden = 16;
  std::size_t head_hidden = 0;
  double input_scale = 10.0;
  double output_scale = 10.0;
  std::size_t epochs = 100;
  std::size_t batch = 32;
  double lr = 1e-3;
  double decay = 0.9;
  std::size_t decay_every = 5;
  double clip = 0.0;
  std::size_t truncation = 0;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  std::size_t eval_limit = 0;
  bool verbose = false;
  std::string init;
  std::string out;
  std::string history;
};

void add_train(CLI::App& app, TrainArgs& a) {
  auto* s = app.add_subcommand("train", "Train a recurrent lifetime estimator");
  s->add_option("--dataset", a.dataset, "Dataset file")->required();
  s->add_option("--variant", a.variant, "simple, gru or lstm")
      ->check(CLI::IsMember({"simple", "rnn", "gru", "lstm"}))
      ->capture_default_str();
  s->add_option("--hidden", a.hidden, "Hidden size (4, 8, 16, 32, 64)")->capture_default_str();
  s->add_option("--head-hidden", a.head_hidden, "Head hidden width; 0 = same as --hidden")
      ->capture_default_str();
  s->add_option("--input-scale", a.input_scale, "Timestamp divisor (ns)")->capture_default_str();
  s->add_option("--output-scale", a.output_scale, "Output multiplier (ns)")->capture_default_str();
  s->add_option("--epochs", a.epochs, "Epochs")->capture_default_str();
  s->add_option("--batch", a.batch, "Mini-batch size")->capture_default_str();
  s->add_option("--lr", a.lr, "Initial learning rate")->capture_default_str();
  s->add_option("--decay", a.decay, "Learning-rate decay factor")->capture_default_str();
  s->add_option("--decay-every", a.decay_every, "Epochs between decays")->capture_default_str();
  s->add_option("--clip", a.clip, "Gradient norm clip; 0 = off")->capture_default_str();
  s->add_option("--truncation", a.truncation, "BPTT truncation window; 0 = full")
      ->capture_default_str();
  s->add_option("--seed", a.seed, "Master seed")->capture_default_str();
  s->add_option("--threads", a.threads, "Worker threads")->capture_default_str();
  s->add_option("--eval-limit", a.eval_limit, "Eval samples scored per epoch; 0 = all")
      ->capture_default_str();
  s->add_flag("--verbose", a.verbose, "Print one line per epoch");
  s->add_option("--init", a.init, "Fine-tune from these weights instead of a fresh start");
  s->add_option("--out", a.out, "Weights file")->required();
  s->add_option("--history", a.history, "Training history CSV (default: <out>.history.csv)");
}

int run_train(const CLI::App& sub, const TrainArgs& a) {
  const Dataset d = load_dataset(a.dataset);
  TrainConfig tc;
  tc.model.variant = parse_variant(a.variant);
  tc.model.hidden = a.hidden;
  tc.model.head_hidden = a.head_hidden ? a.head_hidden : a.hidden;
  tc.model.input_scale = a.input_scale;
  tc.model.output_scale = a.output_scale;
  tc.epochs = a.epochs;
  tc.batch_size = a.batch;
  tc.learning_rate = a.lr;
  tc.decay = a.decay;
  tc.decay_every = a.decay_every;
  tc.clip_norm = a.clip;
  tc.truncation = a.truncation;
  tc.seed = a.seed;
  tc.threads = a.threads;
  tc.eval_limit = a.eval_limit;
  tc.verbose = a.verbose;
  std::vector<std::pair<std::string, std::string>> prov;
  if (!a.init.empty()) {
    tc.initial = load_weights(a.init);
    prov.emplace_back("init_weights_sha256", weights_hash(*tc.initial));
  }
  tc.validate();
  const auto start = std::chrono::steady_clock::now();
  TrainResult r = train(tc, d);
  const std::string ds_hash = dataset_hash(d);
  r.weights.dataset_hash = ds_hash;
  save_weights(a.out, r.weights);
  const fs::path hist = a.history.empty() ? sibling(a.out, ".history.csv") : fs::path(a.history);
  write_file(hist, r.history.to_csv());
  prov.emplace_back("dataset_sha256", ds_hash);
  prov.emplace_back("weights_sha256", weights_hash(r.weights));
  write_manifest(sibling(a.out, ".config.toml"), sub, prov);
  if (r.history.diverged) {
    std::cerr << "training diverged: " << r.history.message << '\n';
    return 1;
  }
  const EvalScore test = evaluate(r.weights, d.test(), a.threads);
  std::cout << "best epoch " << r.history.best_epoch << ", test MAPE " << test.mape << " ("
            << seconds_since(start) << " s)\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string dataset;
  std::string estimator = "cmm";
  std::string weights;
  std::size_t bins = 256;
  bool correct_truncation = false;
  std::string t0 = "known";
  std::string split = "test";
  unsigned threads = 1;
  std::string out;
};

void add_eval(CLI::App& app, EvalArgs& a) {
  auto* s = app.add_subcommand("eval", "Estimate lifetimes for a dataset split");
  s->add_option("--dataset", a.dataset, "Dataset file")->required();
  s->add_option("--estimator", a.estimator, "cmm, cmm-bgsub, lsfit or rnn")
      ->check(CLI::IsMember({"cmm", "cmm-bgsub", "lsfit", "rnn"}))
      ->capture_default_str();
  s->add_option("--weights", a.weights, "Weights file (rnn)");
  s->add_option("--bins", a.bins, "Histogram bins (lsfit, estimated t0)")->capture_default_str();
  s->add_flag("--correct-truncation", a.correct_truncation,
              "Undo the bias of the decay cut at the period (cmm, cmm-bgsub)");
  s->add_option("--t0", a.t0, "IRF peak: known (ground truth) or estimated")
      ->check(CLI::IsMember({"known", "estimated"}))
      ->capture_default_str();
  s->add_option("--split", a.split, "train, eval, test or all")
      ->check(CLI::IsMember({"train", "eval", "test", "all"}))
      ->capture_default_str();
  s->add_option("--threads", a.threads, "Worker threads")->capture_default_str();
  s->add_option("--out", a.out, "Per-sample CSV")->required();
}

int run_eval(const CLI::App& sub, const EvalArgs& a) {
  const Dataset d = load_dataset(a.dataset);
  std::span<const TimestampSequence> set(d.samples);
  if (a.split == "train") set = d.train();
  if (a.split == "eval") set = d.eval();
  if (a.split == "test") set = d.test();
  if (set.empty()) throw ConfigError("eval: the selected split is empty");

  std::vector<std::pair<std::string, std::string>> prov{{"dataset_sha256", dataset_hash(d)}};
  RnnWeights w;
  if (a.estimator == "rnn") {
    if (a.weights.empty()) throw ConfigError("eval: --estimator rnn needs --weights");
    w = load_weights(a.weights);
    prov.emplace_back("weights_sha256", weights_hash(w));
  }
  const bool known = a.t0 == "known";
  LifetimeEstimator est = [&](std::span<const double> ts, const DecayModel& m) {
    const double T = m.repetition_period;
    const double t0 = known ? m.irf_peak : estimate_irf_peak(ts, T, a.bins);
    EstimateReport r;
    if (a.estimator == "cmm") {
      r = cmm_estimate(ts, t0, T, a.correct_truncation);
    } else if (a.estimator == "cmm-bgsub") {
      const auto n_bg = static_cast<std::size_t>(
          std::llround(m.background() * static_cast<double>(ts.size())));
      if (n_bg >= ts.size()) return std::nan("");
      r = cmm_bg_subtracted(ts, t0, T, n_bg, a.correct_truncation);
    } else if (a.estimator == "lsfit") {
      r = ls_fit(build_histogram(ts, a.bins, T));
    } else {
      return final_estimate(ts, w);
    }
    return r.ok ? r.lifetime : std::nan("");
  };
  std::vector<double> estimates(set.size());
  parallel_for(set.size(), a.threads, [&](std::size_t i) {
    estimates[i] = est(set[i].timestamps, *set[i].truth);
  });
  std::ostringstream os;
  os.precision(17);
  os << "sample_id,truth,estimate,estimator,n_photons\n";
  const std::size_t offset = static_cast<std::size_t>(set.data() - d.samples.data());
  for (std::size_t i = 0; i < set.size(); ++i) {
    os << offset + i << ',' << set[i].true_lifetime() << ',' << estimates[i] << ','
       << a.estimator << ',' << set[i].size() << '\n';
  }
  write_file(a.out, os.str());
  write_manifest(sibling(a.out, ".config.toml"), sub, prov);
  // Same scoring as evaluate_estimator: a failure counts as a 0 ns estimate.
  std::vector<double> truths(set.size()), scored(estimates);
  std::size_t failures = 0;
  double background = 0.0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    truths[i] = set[i].true_lifetime();
    background += set[i].truth->background();
    if (!std::isfinite(scored[i])) {
      scored[i] = 0.0;
      ++failures;
    }
  }
  MetricReport m = compute_metrics(truths, scored);
  m.estimator = a.estimator;
  m.failures = failures;
  m.noise = background / static_cast<double>(set.size());
  std::cout << metrics_summary({m});
  return 0;
}

// ---------------------------------------------------------------------------

struct CrlbArgs {
  std::string axis = "lifetime";
  std::vector<double> grid;
  std::vector<double> noise{0.0};
  std::string methods = "cmm,lsfit";
  std::size_t trials = 3000;
  std::size_t lsfit_trials = 1000;
  std::size_t photons = 1024;
  double tau = 2.5;
  double t0 = 2.0;
  double fwhm = 0.1673;
  double period = 50.0;
  std::string weights;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  std::string out;
  std::string plot_dir;
};

void add_crlb(CLI::App& app, CrlbArgs& a) {
  auto* s = app.add_subcommand("crlb", "Cramer-Rao bound and Monte Carlo estimator spread");
  s->add_option("--sweep", a.axis, "Sweep axis: lifetime or photons")
      ->check(CLI::IsMember({"lifetime", "photons"}))
      ->capture_default_str();
  s->add_option("--grid", a.grid, "Axis values (default: built-in grid)");
  s->add_option("--noise", a.noise, "Background fractions; one CSV per level")
      ->capture_default_str();
  s->add_option("--methods", a.methods, "Comma list of cmm, cmm-corrected, cmm-bgsub, lsfit, rnn")
      ->capture_default_str();
  s->add_option("--trials", a.trials, "Monte Carlo trials per point")->capture_default_str();
  s->add_option("--lsfit-trials", a.lsfit_trials, "Trials for lsfit")->capture_default_str();
  s->add_option("--photons", a.photons, "Photons per sequence (lifetime sweep)")
      ->capture_default_str();
  s->add_option("--tau", a.tau, "Lifetime (ns, photon sweep)")->capture_default_str();
  s->add_option("--t0", a.t0, "IRF peak (ns)")->capture_default_str();
  s->add_option("--fwhm", a.fwhm, "IRF FWHM (ns)")->capture_default_str();
  s->add_option("--period", a.period, "Repetition period (ns)")->capture_default_str();
  s->add_option("--weights", a.weights, "Weights file for the rnn method");
  s->add_option("--seed", a.seed, "Master seed")->capture_default_str();
  s->add_option("--threads", a.threads, "Worker threads")->capture_default_str();
  s->add_option("--out", a.out, "Output CSV; with several noise levels, a _noiseN suffix is added")
      ->required();
  s->add_option("--emit-plot-data", a.plot_dir, "Directory for x/y series per method");
}

std::string noise_tag(double noise) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "noise%g", noise * 100.0);
  return buf;
}

void emit_plot_data(const fs::path& dir, const std::string& prefix,
                    const std::vector<SweepRow>& rows) {
  ensure_dir(dir);
  std::map<std::string, std::ostringstream> series;
  for (const SweepRow& r : rows) {
    auto& os = series[r.method];
    if (os.tellp() == 0) {
      os.precision(10);
      os << "x,y,y_lo,y_hi\n";
    }
    os << r.axis_value << ',' << r.rel_std << ',' << r.ci_lo << ',' << r.ci_hi << '\n';
  }
  for (auto& [method, os] : series) {
    write_file(dir / (prefix + "_" + method + ".csv"), os.str());
  }
}

int run_crlb(const CLI::App& sub, const CrlbArgs& a) {
  SweepConfig sc;
  sc.axis = a.axis == "lifetime" ? SweepAxis::kLifetime : SweepAxis::kPhotons;
  sc.grid = a.grid.empty() ? default_grid(sc.axis) : a.grid;
  sc.base = DecayModel::mono(a.tau, a.t0, a.fwhm, a.period);
  sc.photons = a.photons;
  sc.methods = split_list(a.methods);
  sc.mc.trials = a.trials;
  sc.mc.seed = a.seed;
  sc.mc.threads = a.threads;
  sc.lsfit_trials = a.lsfit_trials;
  RnnWeights w;
  std::vector<std::pair<std::string, std::string>> prov;
  if (!a.weights.empty()) {
    w = load_weights(a.weights);
    prov.emplace_back("weights_sha256", weights_hash(w));
  }
  const fs::path out(a.out);
  for (double noise : a.noise) {
    sc.background = noise;
    const auto rows = sweep(sc, a.weights.empty() ? nullptr : &w);
    fs::path path = out;
    if (a.noise.size() > 1) {
      path = out.parent_path() / (out.stem().string() + "_" + noise_tag(noise) + out.extension().string());
    }
    write_file(path, sweep_to_csv(rows));
    if (!a.plot_dir.empty()) {
      emit_plot_data(a.plot_dir, a.axis + "_" + noise_tag(noise), rows);
    }
    std::cout << "wrote " << path.string() << '\n';
  }
  write_manifest(sibling(a.out, ".config.toml"), sub, prov);
  return 0;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
  std::string suite = "table1";
  std::string scale = "desk";
  std::string weights_dir;
  std::string out_dir;
  std::size_t samples = 0;
  std::size_t trials = 0;
  unsigned threads = 1;
  std::string plot_dir;
};

void add_bench(CLI::App& app, BenchArgs& a) {
  auto* s = app.add_subcommand("bench", "Reproduce the estimator comparison tables and sweeps");
  s->add_option("--suite", a.suite, "table1, table2 or crlb-sweep")
      ->check(CLI::IsMember({"table1", "table2", "crlb-sweep"}))
      ->capture_default_str();
  s->add_option("--scale", a.scale, "desk or paper")
      ->check(CLI::IsMember({"desk", "paper"}))
      ->capture_default_str();
  s->add_option("--weights-dir", a.weights_dir, "Directory of *.json weights; each is a table row");
  s->add_option("--out-dir", a.out_dir, "Output directory")->required();
  s->add_option("--samples", a.samples, "Test samples per noise level (overrides the scale)");
  s->add_option("--trials", a.trials, "Monte Carlo trials for crlb-sweep (overrides the scale)");
  s->add_option("--threads", a.threads, "Worker threads")->capture_default_str();
  s->add_option("--emit-plot-data", a.plot_dir, "Directory for x/y series (crlb-sweep)");
}

int run_bench(const CLI::App& sub, const BenchArgs& a) {
  const fs::path out(a.out_dir);
  ensure_dir(out);
  const bool paper = a.scale == "paper";
  std::vector<std::pair<std::string, std::string>> prov;
  std::vector<NamedWeights> nets;
  if (!a.weights_dir.empty()) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(a.weights_dir)) {
      if (e.path().extension() == ".json" &&
          e.path().filename().string().find(".manifest") == std::string::npos) {
        files.push_back(e.path());
      }
    }
    std::sort(files.begin(), files.end());
    for (const fs::path& f : files) {
      try {
        nets.push_back({f.stem().string(), load_weights(f)});
        prov.emplace_back(f.stem().string() + "_sha256", weights_hash(nets.back().weights));
      } catch (const FormatError& e) {
        std::cerr << "skipping " << f.string() << ": " << e.what() << '\n';
      }
    }
  }
  if (a.suite == "crlb-sweep") {
    const std::size_t trials = a.trials ? a.trials : (paper ? 3000 : 1000);
    for (const char* axis : {"lifetime", "photons"}) {
      for (double noise : {0.0, 0.01, 0.05}) {
        SweepConfig sc;
        sc.axis = std::string(axis) == "lifetime" ? SweepAxis::kLifetime : SweepAxis::kPhotons;
        sc.grid = default_grid(sc.axis);
        sc.background = noise;
        sc.methods = {"cmm", "lsfit"};
        if (noise > 0.0) sc.methods.push_back("cmm-bgsub");
        sc.mc.trials = trials;
        sc.mc.threads = a.threads;
        sc.lsfit_trials = paper ? 1000 : std::max<std::size_t>(trials / 3, 100);
        const RnnWeights* w = nets.empty() ? nullptr : &nets.front().weights;
        if (w) sc.methods.push_back("rnn");
        const auto rows = sweep(sc, w);
        const std::string name = std::string("crlb_") + axis + "_" + noise_tag(noise);
        write_file(out / (name + ".csv"), sweep_to_csv(rows));
        if (!a.plot_dir.empty()) emit_plot_data(a.plot_dir, name, rows);
        std::cout << "wrote " << (out / (name + ".csv")).string() << '\n';
      }
    }
  } else {
    const std::size_t samples = a.samples ? a.samples : (paper ? 50000 : 10000);
    TableConfig tc = a.suite == "table1" ? TableConfig::table1(samples) : TableConfig::table2(samples);
    tc.networks = nets;
    tc.threads = a.threads;
    const auto start = std::chrono::steady_clock::now();
    const auto rows = run_table(tc);
    write_file(out / (a.suite + ".csv"), metrics_to_csv(rows));
    const std::string summary = metrics_summary(rows);
    write_file(out / (a.suite + "_summary.txt"), summary);
    std::cout << summary;
    std::cerr << "elapsed " << seconds_since(start) << " s\n";
  }
  write_manifest(out / "effective_config.toml", sub, prov);
  return 0;
}

// ---------------------------------------------------------------------------

struct QuantizeArgs {
  std::string weights;
  int wbits = 16;
  int abits = 16;
  std::string rounding = "convergent";
  std::string overflow = "saturate";
  double input_range = 50.0;
  std::string dataset;
  std::size_t limit = 1000;
  std::string golden;
  std::size_t golden_count = 8;
  std::size_t golden_length = 64;
  std::uint64_t seed = 1;
  std::string out;
};

void add_quantize(CLI::App& app, QuantizeArgs& a) {
  auto* s = app.add_subcommand("quantize", "Convert a GRU to fixed point");
  s->add_option("--weights", a.weights, "Float weights file")->required();
  s->add_option("--wbits", a.wbits, "Weight bits (8, 16, 32)")
      ->check(CLI::IsMember({8, 16, 32}))
      ->capture_default_str();
  s->add_option("--abits", a.abits, "Activation bits (8, 16, 32)")
      ->check(CLI::IsMember({8, 16, 32}))
      ->capture_default_str();
  s->add_option("--rounding", a.rounding, "truncate, half-up or convergent")
      ->check(CLI::IsMember({"truncate", "half-up", "convergent"}))
      ->capture_default_str();
  s->add_option("--overflow", a.overflow, "saturate or wrap")
      ->check(CLI::IsMember({"saturate", "wrap"}))
      ->capture_default_str();
  s->add_option("--input-range", a.input_range, "Largest timestamp (ns)")->capture_default_str();
  s->add_option("--dataset", a.dataset, "Dataset for the float-vs-fixed error report");
  s->add_option("--limit", a.limit, "Test samples used in the error report")->capture_default_str();
  s->add_option("--golden", a.golden, "Write golden vectors to this file");
  s->add_option("--golden-count", a.golden_count, "Golden sequences")->capture_default_str();
  s->add_option("--golden-length", a.golden_length, "Photons per golden sequence")
      ->capture_default_str();
  s->add_option("--seed", a.seed, "Seed for golden sequences")->capture_default_str();
  s->add_option("--out", a.out, "Quantized weights file")->required();
}

int run_quantize(const CLI::App& sub, const QuantizeArgs& a) {
  const RnnWeights w = load_weights(a.weights);
  QuantizeOptions opts;
  opts.weight_bits = a.wbits;
  opts.activation_bits = a.abits;
  opts.rounding = parse_rounding(a.rounding);
  opts.overflow = a.overflow == "wrap" ? Overflow::kWrap : Overflow::kSaturate;
  opts.input_range = a.input_range;
  QuantizedWeights q = quantize_model(w, opts);
  q.float_hash = weights_hash(w);
  save_quantized(a.out, q, opts);
  const std::string q_hash = sha256_hex(serialize_quantized(q));

  std::ostringstream report;
  report.precision(6);
  report << "tensor      frac_bits  max_error     saturated\n";
  const auto t = q.tensors();
  for (std::size_t i = 0; i < t.size(); ++i) {
    char line[128];
    std::snprintf(line, sizeof line, "%-10s  %9d  %.6e  %llu\n",
                  std::string(RnnWeights::kTensorNames[i]).c_str(), t[i]->fmt.frac_bits,
                  t[i]->max_error, static_cast<unsigned long long>(t[i]->saturated));
    report << line;
  }
  for (const auto& warn : q.warnings) report << "warning: " << warn << '\n';
  std::vector<std::pair<std::string, std::string>> prov{{"float_weights_sha256", q.float_hash},
                                                        {"quantized_sha256", q_hash}};
  if (!a.dataset.empty()) {
    const Dataset d = load_dataset(a.dataset);
    prov.emplace_back("dataset_sha256", dataset_hash(d));
    const auto test = d.test().subspan(0, std::min(a.limit, d.test().size()));
    std::vector<double> truth, fl, fx;
    for (const auto& s : test) {
      truth.push_back(s.true_lifetime());
      fl.push_back(final_estimate(s.timestamps, w));
      fx.push_back(quantized_stream_estimate(s.timestamps, q));
    }
    const MetricReport mf = compute_metrics(truth, fl);
    const MetricReport mq = compute_metrics(truth, fx);
    report << "float MAPE " << mf.mape << "  fixed MAPE " << mq.mape << "  over "
           << test.size() << " test samples\n";
  }
  write_file(sibling(a.out, ".report.txt"), report.str());
  if (!a.golden.empty()) {
    Rng rng(derive_seed(a.seed, "golden"));
    std::vector<std::vector<std::int64_t>> inputs;
    for (std::size_t k = 0; k < a.golden_count; ++k) {
      const DecayModel m = DecayModel::mono(rng.uniform(0.2, 5.0), rng.uniform(0.0, 5.0),
                                            0.1673, 50.0, rng.uniform(0.0, 0.1));
      const auto seq = generate_sequence(m, a.golden_length, derive_seed(a.seed, "golden", k));
      std::vector<std::int64_t> codes;
      for (double ts : seq.timestamps) codes.push_back(quantize_input(ts, q));
      inputs.push_back(std::move(codes));
    }
    write_file(a.golden, golden_to_text(make_golden(q, inputs), q_hash));
  }
  write_manifest(sibling(a.out, ".config.toml"), sub, prov);
  std::cout << report.str();
  return 0;
}

// ---------------------------------------------------------------------------

struct PipelineArgs {
  std::string weights;
  std::string scene = "bead";
  double rate = 1e4;
  double lifetime = 5.5;
  double serialized_rate = 0.0;
  double frame_period = 1e8;
  double duration = 1e8;
  double latency = 1000.0;
  std::uint32_t min_photons = 16;
  std::uint64_t seed = 1;
  std::string events_in;
  std::string events_out;
  std::string stats_out;
  std::string out_dir;
};

void add_pipeline(CLI::App& app, PipelineArgs& a) {
  auto* s = app.add_subcommand("pipeline", "Simulate the four-unit real-time dataflow");
  s->add_option("--weights", a.weights, "Quantized weights (.bin) or float weights (.json)")
      ->required();
  s->add_option("--scene", a.scene, "bead or uniform")
      ->check(CLI::IsMember({"bead", "uniform"}))
      ->capture_default_str();
  s->add_option("--rate", a.rate, "Photons per second per lit pixel")->capture_default_str();
  s->add_option("--lifetime", a.lifetime, "Lifetime of lit pixels (ns)")->capture_default_str();
  s->add_option("--serialized-rate", a.serialized_rate,
                "Total rate of a saturated serializer stream (photons/s); 0 = Poisson pixels")
      ->capture_default_str();
  s->add_option("--frame-period", a.frame_period, "Frame period (ns)")->capture_default_str();
  s->add_option("--duration", a.duration, "Simulated time (ns)")->capture_default_str();
  s->add_option("--latency", a.latency, "Core latency per photon (ns)")->capture_default_str();
  s->add_option("--min-photons", a.min_photons, "Photons needed for a valid pixel")
      ->capture_default_str();
  s->add_option("--seed", a.seed, "Master seed")->capture_default_str();
  s->add_option("--events-in", a.events_in, "Replay an event stream file instead of synthesizing");
  s->add_option("--events-out", a.events_out, "Save the event stream");
  s->add_option("--stats-out", a.stats_out, "Statistics report");
  s->add_option("--out-dir", a.out_dir, "Directory for one CSV per frame")->required();
}

int run_pipeline_cmd(const CLI::App& sub, const PipelineArgs& a) {
  QuantizedWeights q;
  std::vector<std::pair<std::string, std::string>> prov;
  if (fs::path(a.weights).extension() == ".json") {
    const RnnWeights w = load_weights(a.weights);
    q = quantize_model(w, QuantizeOptions{});
    q.float_hash = weights_hash(w);
    prov.emplace_back("float_weights_sha256", q.float_hash);
  } else {
    q = load_quantized(a.weights);
    prov.emplace_back("quantized_sha256", sha256_hex(read_file(a.weights)));
  }
  std::vector<PhotonEvent> events;
  if (!a.events_in.empty()) {
    events = load_events(a.events_in);
    prov.emplace_back("events_sha256", sha256_hex(read_file(a.events_in)));
  } else {
    Scene scene;
    if (a.scene == "bead") {
      BeadSceneOptions bo;
      bo.rate = a.rate;
      bo.lifetime = a.lifetime;
      scene = bead_scene(bo);
    } else {
      scene = uniform_scene(DecayModel::mono(a.lifetime, 2.0, 0.1673, 50.0), a.rate);
    }
    events = a.serialized_rate > 0.0
                 ? synthesize_serialized_stream(scene, a.serialized_rate, a.duration, a.seed)
                 : synthesize_sensor_stream(scene, a.duration, a.seed);
  }
  if (!a.events_out.empty()) save_events(a.events_out, events);
  PipelineConfig pc;
  pc.frame_period_ns = a.frame_period;
  pc.core_latency_ns = a.latency;
  pc.min_photons = a.min_photons;
  pc.duration_ns = a.events_in.empty() ? a.duration : 0.0;
  const PipelineResult r = run_pipeline(events, q, pc);
  const fs::path dir(a.out_dir);
  ensure_dir(dir);
  for (const LifetimeFrame& f : r.frames) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%05zu.csv", f.index);
    write_file(dir / name, frame_to_csv(f));
  }
  const std::string stats = r.stats.to_text();
  write_file(a.stats_out.empty() ? dir / "stats.txt" : fs::path(a.stats_out), stats);
  write_manifest(dir / "effective_config.toml", sub, prov);
  std::cout << stats;
  return 0;
}

// ---------------------------------------------------------------------------

struct VerifyArgs {
  std::string dataset;
  std::string weights;
  std::string quantized;
  std::string golden;
};

void add_verify(CLI::App& app, VerifyArgs& a) {
  auto* s = app.add_subcommand("verify", "Check file checksums and the provenance chain");
  s->add_option("--dataset", a.dataset, "Dataset file");
  s->add_option("--weights", a.weights, "Float weights file");
  s->add_option("--quantized", a.quantized, "Quantized weights file");
  s->add_option("--golden", a.golden, "Golden vectors file");
}

int run_verify(const VerifyArgs& a) {
  int failures = 0;
  auto report = [&](bool ok, const std::string& what) {
    std::cout << (ok ? "ok    " : "FAIL  ") << what << '\n';
    if (!ok) ++failures;
  };
  std::optional<Dataset> d;
  std::optional<RnnWeights> w;
  std::optional<QuantizedWeights> q;
  if (!a.dataset.empty()) {
    d = load_dataset(a.dataset);
    report(true, "dataset checksum " + a.dataset);
  }
  if (!a.weights.empty()) {
    w = load_weights(a.weights);
    report(true, "weights content hash " + a.weights);
    if (d) report(w->dataset_hash == dataset_hash(*d), "weights were trained on the dataset");
  }
  if (!a.quantized.empty()) {
    q = load_quantized(a.quantized);
    report(true, "quantized checksum " + a.quantized);
    if (w) report(q->float_hash == weights_hash(*w), "quantized weights derive from the weights");
  }
  if (!a.golden.empty()) {
    std::string hash;
    const auto golden = golden_from_text(read_file(a.golden), &hash);
    if (q) {
      report(hash == sha256_hex(read_file(a.quantized)), "golden vectors belong to the quantized weights");
      const QuantizedGru gru(*q);
      bool all = true;
      for (const GoldenVector& g : golden) {
        QuantState s = init_quant_state(*q);
        for (auto x : g.inputs) gru.step(s, x);
        all = all && s.h == g.state && gru.head_raw(s) == g.head;
      }
      report(all, "golden vectors reproduce bit-exactly (" + std::to_string(golden.size()) + ")");
    } else {
      report(false, "golden vectors need --quantized");
    }
  }
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Recurrent-network fluorescence lifetime estimation toolkit", "flimrnn"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML file with option values; flags given on the command line win");
  SimulateArgs sim;
  TrainArgs tr;
  EvalArgs ev;
  BenchArgs be;
  CrlbArgs cr;
  QuantizeArgs qa;
  PipelineArgs pa;
  VerifyArgs va;
  add_simulate(app, sim);
  add_train(app, tr);
  add_eval(app, ev);
  add_bench(app, be);
  add_crlb(app, cr);
  add_quantize(app, qa);
  add_pipeline(app, pa);
  add_verify(app, va);
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  try {
    const CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    if (name == "simulate") return run_simulate(*sub, sim);
    if (name == "train") return run_train(*sub, tr);
    if (name == "eval") return run_eval(*sub, ev);
    if (name == "bench") return run_bench(*sub, be);
    if (name == "crlb") return run_crlb(*sub, cr);
    if (name == "quantize") return run_quantize(*sub, qa);
    if (name == "pipeline") return run_pipeline_cmd(*sub, pa);
    if (name == "verify") return run_verify(va);
  } catch (const ConfigError& e) {
    std::cerr << "flimrnn: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "flimrnn: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
