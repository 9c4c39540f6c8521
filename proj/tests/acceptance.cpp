// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The flimrnn Authors
//
// Acceptance run. Prints one PASS/FAIL line per criterion and exits non-zero
// if any fails. Trained networks are cached under --work, keyed by a hash of
// their dataset and training configuration.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "flim/benchmark.hpp"
#include "flim/crlb.hpp"
#include "flim/estimators.hpp"
#include "flim/hash.hpp"
#include "flim/io.hpp"
#include "flim/parallel.hpp"
#include "flim/pipeline.hpp"
#include "flim/quant.hpp"
#include "flim/trainer.hpp"
#include "test_util.hpp"

using namespace flim;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Context {
  fs::path work;
  fs::path data;
  fs::path cli;
  unsigned threads = 1;
  bool fresh = false;
};

// ---------------------------------------------------------------------------
// Trained-model cache shared by criteria 7-10.

DatasetConfig clean_config() {
  DatasetConfig c = DatasetConfig::desk_scale();  // 50k x 256, tau in [0.2, 5]
  c.seed = 11;
  return c;
}

DatasetConfig noisy_config() {
  DatasetConfig c = DatasetConfig::desk_scale();
  c.background = {0.0, 0.1};
  c.seed = 12;
  return c;
}

TrainConfig train_config(Variant v, std::size_t hidden, std::size_t epochs,
                         std::uint64_t seed, unsigned threads) {
  TrainConfig t;
  t.model.variant = v;
  t.model.hidden = hidden;
  t.model.head_hidden = hidden;
  t.epochs = epochs;
  t.seed = seed;
  t.threads = threads;
  return t;
}

std::string train_key(const TrainConfig& t, const DatasetConfig& d) {
  std::ostringstream os;
  os.precision(17);
  os << d.to_text() << variant_name(t.model.variant) << ' ' << t.model.hidden << ' '
     << t.model.head_hidden << ' ' << t.model.input_scale << ' ' << t.model.output_scale
     << ' ' << t.epochs << ' ' << t.batch_size << ' ' << t.learning_rate << ' ' << t.decay
     << ' ' << t.decay_every << ' ' << t.clip_norm << ' ' << t.truncation << ' ' << t.seed;
  if (t.initial) os << " init " << weights_hash(*t.initial);
  return sha256_hex(os.str()).substr(0, 16);
}

class ModelCache {
 public:
  explicit ModelCache(const Context& ctx) : ctx_(ctx) {}

  const Dataset& dataset(const DatasetConfig& c) {
    const std::string key = c.to_text();
    auto it = datasets_.find(key);
    if (it == datasets_.end()) {
      it = datasets_.emplace(key, generate_dataset(c, ctx_.threads)).first;
    }
    return it->second;
  }

  RnnWeights get(const std::string& label, const TrainConfig& t, const DatasetConfig& d) {
    const fs::path file = ctx_.work / "models" / (label + "-" + train_key(t, d) + ".json");
    if (!ctx_.fresh && fs::exists(file)) return load_weights(file);
    std::printf("       training %s (%zu epochs)...\n", label.c_str(), t.epochs);
    std::fflush(stdout);
    const auto start = std::chrono::steady_clock::now();
    const TrainResult r = train(t, dataset(d));
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("       %s: best epoch %zu, %.0f s\n", label.c_str(), r.history.best_epoch, secs);
    fs::create_directories(file.parent_path());
    save_weights(file, r.weights);
    write_file(fs::path(file.string() + ".history.csv"), r.history.to_csv(true));
    return r.weights;
  }

  RnnWeights gru16() { return gru(16); }

  RnnWeights gru(std::size_t hidden) {
    return get("gru" + std::to_string(hidden),
               train_config(Variant::kGru, hidden, 30, 1, ctx_.threads), clean_config());
  }

  RnnWeights gru16_noise() {
    TrainConfig t = train_config(Variant::kGru, 16, 15, 2, ctx_.threads);
    t.initial = gru16();
    return get("gru16-noise", t, noisy_config());
  }

  // GRU-32 at 60 epochs: the 30-epoch model trained 30 more, picking up the
  // learning-rate schedule where it stopped.
  RnnWeights gru32_long() {
    TrainConfig t = train_config(Variant::kGru, 32, 30, 3, ctx_.threads);
    t.learning_rate *= std::pow(t.decay, 30.0 / static_cast<double>(t.decay_every));
    t.initial = gru(32);
    return get("gru32-long", t, clean_config());
  }

 private:
  const Context& ctx_;
  std::map<std::string, Dataset> datasets_;
};

std::vector<TimestampSequence> test_set(std::size_t count, std::size_t photons,
                                        double background, std::uint64_t seed,
                                        unsigned threads) {
  DatasetConfig c;
  c.samples = count;
  c.photons = photons;
  c.background = {background, background};
  c.seed = seed;
  c.split = {0.0, 0.0, 1.0};
  return generate_dataset(c, threads).samples;
}

double mape_of(const std::string& name, const LifetimeEstimator& est,
               std::span<const TimestampSequence> set, unsigned threads) {
  return evaluate_estimator(name, est, set, threads).mape;
}

// ---------------------------------------------------------------------------

Outcome sampler_fidelity(const Context&) {
  Rng rng(2026);
  double worst_p = 1.0;
  double worst_norm = 0.0;
  int worst = -1;
  for (int k = 0; k < 10; ++k) {
    const DecayModel m = DecayModel::mono(rng.uniform(0.2, 5.0), rng.uniform(0.0, 5.0),
                                          0.1673, 50.0, rng.uniform(0.0, 0.1));
    const auto s = generate_sequence(m, 1000000, 500 + static_cast<std::uint64_t>(k));
    const double p = test::chi2_fit_pvalue(s.timestamps, m, 256);
    if (p < worst_p) {
      worst_p = p;
      worst = k;
    }
    worst_norm = std::max(worst_norm, std::abs(test::density_integral(m, 0.0, 50.0) - 1.0));
  }
  return {worst_p > 0.01 && worst_norm <= 1e-9,
          fmt("min chi2 p = %.4f at model %d (> 0.01), max |int f - 1| = %.2e (<= 1e-9)",
              worst_p, worst, worst_norm)};
}

Outcome crlb_baseline(const Context&) {
  const DecayModel m = DecayModel::mono(2.5, 0.0, 1e-9, 50.0);
  const double b = crlb_point(m, 1024).rel_std;
  const double rel = std::abs(b - 0.03125) / 0.03125;
  return {rel <= 0.01, fmt("bound %.6f vs 0.03125, rel diff %.4f (<= 0.01)", b, rel)};
}

Outcome cmm_optimality(const Context& ctx) {
  const DecayModel m = DecayModel::mono(2.5, 2.0, 0.1673, 50.0);
  const double bound = crlb_point(m, 1024).rel_std;
  MonteCarloOptions mc;
  mc.trials = 3000;
  mc.seed = 3;
  mc.threads = ctx.threads;
  const MonteCarloResult r = monte_carlo_std(make_estimator("cmm"), m, 1024, mc);
  const double rel = std::abs(r.rel_std - bound) / bound;
  return {rel <= 0.10 && r.failures == 0,
          fmt("CMM rel std %.5f [%.5f, %.5f] vs CRLB %.5f, rel diff %.3f (<= 0.10)",
              r.rel_std, r.ci_lo, r.ci_hi, bound, rel)};
}

Outcome cmm_noise_fragility(const Context& ctx) {
  const auto set = test_set(10000, 1024, 0.05, 44, ctx.threads);
  const double cmm = mape_of("cmm", make_estimator("cmm"), set, ctx.threads);
  const double star = mape_of("cmm-bgsub", make_estimator("cmm-bgsub"), set, ctx.threads);
  return {cmm > 0.5 && star < 0.25,
          fmt("CMM MAPE %.4f (> 0.5), CMM* MAPE %.4f (< 0.25) at 5%% background", cmm, star)};
}

Outcome cmm_accuracy(const Context& ctx) {
  const auto set = test_set(10000, 1024, 0.0, 55, ctx.threads);
  const double cmm = mape_of("cmm", make_estimator("cmm"), set, ctx.threads);
  return {std::abs(cmm - 0.025) <= 0.003, fmt("CMM MAPE %.5f (0.025 +/- 0.003)", cmm)};
}

double batch_loss(const RnnWeights& w, const std::vector<std::vector<double>>& seqs,
                  const std::vector<double>& truths, std::span<const double> sw) {
  double total = 0.0;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    total += weighted_mspe(predict_all_steps(seqs[i], w), truths[i], sw);
  }
  return total / static_cast<double>(seqs.size());
}

Outcome gradient_check(const Context&) {
  double worst = 0.0;
  for (Variant v : {Variant::kSimple, Variant::kGru, Variant::kLstm}) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      RnnConfig c;
      c.variant = v;
      c.hidden = 4;
      c.head_hidden = 4;
      RnnWeights w = init_weights(c, seed);
      Rng rng(seed + 100);
      for (auto t : w.tensors()) {
        for (double& x : t) x += rng.uniform(-0.3, 0.3);
      }
      std::vector<std::vector<double>> seqs;
      std::vector<double> truths;
      for (int i = 0; i < 3; ++i) {
        const double tau = rng.uniform(0.5, 5.0);
        seqs.push_back(generate_sequence(DecayModel::mono(tau, rng.uniform(0.0, 5.0), 0.1673,
                                                          50.0),
                                         16, seed * 31 + static_cast<std::uint64_t>(i))
                           .timestamps);
        truths.push_back(tau);
      }
      const auto sw = loss_weights(16);
      const GradientResult g = bptt_gradients(w, seqs, truths);
      auto pt = w.tensors();
      auto gt = g.grad.tensors();
      for (std::size_t k = 0; k < pt.size(); ++k) {
        for (std::size_t j = 0; j < pt[k].size(); ++j) {
          const double x = pt[k][j];
          const double eps = 1e-5;
          pt[k][j] = x + eps;
          const double up = batch_loss(w, seqs, truths, sw);
          pt[k][j] = x - eps;
          const double dn = batch_loss(w, seqs, truths, sw);
          pt[k][j] = x;
          const double fd = (up - dn) / (2.0 * eps);
          const double denom = std::max({std::abs(fd), std::abs(gt[k][j]), 1e-8});
          worst = std::max(worst, std::abs(fd - gt[k][j]) / denom);
        }
      }
    }
  }
  return {worst < 1e-4, fmt("max relative error %.2e over 3 variants x 5 seeds (< 1e-4)", worst)};
}

Outcome desk_training(const Context& ctx, ModelCache& cache) {
  const Dataset& clean = cache.dataset(clean_config());
  const RnnWeights gru16 = cache.gru(16);
  const double eval_mape = evaluate(gru16, clean.eval(), ctx.threads).mape;

  struct Row {
    const char* label;
    Variant variant;
    std::size_t hidden;
  };
  const Row rows[] = {{"simple16", Variant::kSimple, 16}, {"lstm16", Variant::kLstm, 16}};
  std::map<std::string, double> test;
  test["gru16"] = evaluate(gru16, clean.test(), ctx.threads).mape;
  test["gru8"] = evaluate(cache.gru(8), clean.test(), ctx.threads).mape;
  test["gru32"] = evaluate(cache.gru(32), clean.test(), ctx.threads).mape;
  for (const Row& r : rows) {
    const RnnWeights w =
        cache.get(r.label, train_config(r.variant, r.hidden, 30, 1, ctx.threads), clean_config());
    test[r.label] = evaluate(w, clean.test(), ctx.threads).mape;
  }
  const bool gated = test["gru16"] < test["simple16"] && test["lstm16"] < test["simple16"];
  const bool sizes = test["gru16"] <= test["gru8"] + 0.005 && test["gru32"] <= test["gru16"] + 0.005;
  return {eval_mape <= 0.06 && gated && sizes,
          fmt("GRU-16 eval MAPE %.4f (<= 0.06); test MAPE simple16 %.4f, gru16 %.4f, "
              "lstm16 %.4f, gru8 %.4f, gru32 %.4f (gated < simple: %s, size ladder "
              "+/-0.005: %s)",
              eval_mape, test["simple16"], test["gru16"], test["lstm16"], test["gru8"],
              test["gru32"], gated ? "yes" : "no", sizes ? "yes" : "no")};
}

Outcome noise_robustness(const Context& ctx, ModelCache& cache) {
  const RnnWeights w = cache.gru16_noise();
  const auto set = test_set(5000, 256, 0.05, 13, ctx.threads);
  const double rnn = mape_of("rnn", make_estimator("rnn", &w), set, ctx.threads);
  const double ls = mape_of("lsfit", make_estimator("lsfit"), set, ctx.threads);
  const double cmm = mape_of("cmm", make_estimator("cmm"), set, ctx.threads);
  const double star = mape_of("cmm-bgsub", make_estimator("cmm-bgsub"), set, ctx.threads);
  const bool pass = rnn < ls && rnn < cmm && rnn < star && rnn <= 0.08;
  return {pass, fmt("MAPE at 5%% background, 256 photons: RNN %.4f (<= 0.08), LS %.4f, "
                    "CMM %.4f, CMM* %.4f",
                    rnn, ls, cmm, star)};
}

double quant_mape(const QuantizedWeights& q, std::span<const TimestampSequence> set,
                  unsigned threads) {
  std::vector<double> ape(set.size());
  parallel_for(set.size(), threads, [&](std::size_t i) {
    const double y = set[i].true_lifetime();
    ape[i] = std::abs(quantized_stream_estimate(set[i].timestamps, q) - y) / y;
  });
  double s = 0.0;
  for (double a : ape) s += a;
  return s / static_cast<double>(set.size());
}

Outcome quantization(const Context& ctx, ModelCache& cache) {
  const RnnWeights w = cache.gru16();
  // Same length as training.
  const auto set = test_set(1000, 256, 0.0, 4242, ctx.threads);
  const double fl = evaluate(w, set, ctx.threads).mape;
  auto mape_with = [&](int wbits, int abits, Rounding r) {
    QuantizeOptions o;
    o.weight_bits = wbits;
    o.activation_bits = abits;
    o.rounding = r;
    return quant_mape(quantize_model(w, o), set, ctx.threads);
  };
  const double q16 = mape_with(16, 16, Rounding::kConvergent);
  const double trunc16 = mape_with(16, 16, Rounding::kTruncate);
  const double a8 = mape_with(16, 8, Rounding::kConvergent);
  const double a8_trunc = mape_with(16, 8, Rounding::kTruncate);
  const bool pass = q16 <= fl + 0.01 && a8 > 0.5 && q16 <= trunc16;
  return {pass, fmt("float %.4f, 16/16 convergent %.4f (<= float + 0.01), 16/16 truncate "
                    "%.4f (>= convergent), 8-bit activations convergent %.4f (> 0.5; "
                    "truncate %.4f)",
                    fl, q16, trunc16, a8, a8_trunc)};
}

Outcome pipeline_equivalence(const Context& ctx, ModelCache& cache) {
  (void)ctx;
  const QuantizedWeights q = quantize_model(cache.gru16(), {});
  const QuantizedGru gru(q);

  // Round-robin over a subset of pixels, 1.1 us apart: no unit is ever busy.
  std::vector<std::uint32_t> pixels;
  for (std::uint32_t p = 0; p < kPixelCount; p += 7) pixels.push_back(p);
  std::map<std::uint32_t, std::vector<double>> per_pixel;
  Rng rng(10);
  for (std::uint32_t p : pixels) {
    const DecayModel m = DecayModel::mono(rng.uniform(0.2, 5.0), rng.uniform(0.0, 5.0),
                                          0.1673, 50.0);
    per_pixel[p] = generate_sequence(m, 300, 1000 + p, 0.001).timestamps;
  }
  std::vector<PhotonEvent> ev;
  std::uint64_t wall = 0;
  for (std::size_t i = 0; i < 300; ++i) {
    for (std::uint32_t p : pixels) {
      ev.push_back({p, wall,
                    static_cast<std::uint32_t>(std::llround(per_pixel[p][i] * 1000.0))});
      wall += 1'100'000;
    }
  }
  PipelineConfig cfg;
  cfg.frame_period_ns = static_cast<double>(wall) * 1e-3 + 1.0;
  const PipelineResult r = run_pipeline(ev, q, cfg);
  std::size_t mismatches = 0;
  for (std::uint32_t p : pixels) {
    QuantState s = init_quant_state(q);
    std::vector<double> ts;
    for (const PhotonEvent& e : ev) {
      if (e.pixel != p) continue;
      gru.step(s, quantize_input(e.timestamp_ns(), q));
      ts.push_back(e.timestamp_ns());
    }
    const LifetimeFrame& f = r.frames.at(0);
    if (f.raw[p] != gru.head_raw(s) ||
        f.lifetime[p] != std::max(0.0, quantized_stream_estimate(ts, q))) {
      ++mismatches;
    }
  }
  const bool exact = r.frames.size() == 1 && r.stats.dropped == 0 && mismatches == 0;

  const Scene scene = uniform_scene(DecayModel::mono(2.5, 1.0, 0.1673, 50.0), 1.0);
  const auto stream = synthesize_serialized_stream(scene, 8e6, 5e6, 3);
  PipelineConfig tc;
  tc.duration_ns = 5e6;
  tc.frame_period_ns = 1e6;
  const PipelineStats s = run_pipeline(stream, q, tc).stats;
  const bool rate = std::abs(s.processed_rate - 4e6) <= 0.02 * 4e6;
  const bool drops = std::abs(s.drop_fraction - 0.5) <= 0.02 * 0.5;
  return {exact && rate && drops,
          fmt("%zu pixels bit-exact, %zu mismatches, %llu drops; 8M/s offered -> %.4g/s "
              "processed (4M +/- 2%%), drop fraction %.4f (0.5 +/- 2%%)",
              pixels.size() - mismatches, mismatches,
              static_cast<unsigned long long>(r.stats.dropped), s.processed_rate,
              s.drop_fraction)};
}

// ---------------------------------------------------------------------------
// Module-level checks that need trained networks. Same cache as above.

Outcome head_gru32(const Context& ctx, ModelCache& cache) {
  const double m =
      evaluate(cache.gru32_long(), cache.dataset(clean_config()).eval(), ctx.threads).mape;
  return {m <= 0.05, fmt("GRU-32 (60 epochs) eval MAPE %.4f (<= 0.05)", m)};
}

Outcome more_photons(const Context& ctx, ModelCache& cache) {
  const RnnWeights w = cache.gru(16);
  const auto set = test_set(1000, 1024, 0.0, 77, ctx.threads);
  std::vector<double> at128(set.size()), at1024(set.size());
  parallel_for(set.size(), ctx.threads, [&](std::size_t i) {
    const auto e = stream_estimate(set[i].timestamps, w, 128);
    const double y = set[i].true_lifetime();
    at128[i] = std::abs(e.front().estimate - y) / y;
    at1024[i] = std::abs(e.back().estimate - y) / y;
  });
  double a = 0.0, b = 0.0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    a += at128[i];
    b += at1024[i];
  }
  a /= static_cast<double>(set.size());
  b /= static_cast<double>(set.size());
  return {b < a, fmt("GRU-16 MAPE after 128 photons %.4f, after 1024 photons %.4f", a, b)};
}

Outcome permutation(const Context& ctx, ModelCache& cache) {
  const RnnWeights w = cache.gru(16);
  const auto set = test_set(500, 256, 0.0, 78, ctx.threads);
  std::vector<double> rel(set.size());
  parallel_for(set.size(), ctx.threads, [&](std::size_t i) {
    std::vector<double> ts = set[i].timestamps;
    Rng rng(derive_seed(78, "permute", i));
    for (std::size_t k = ts.size() - 1; k > 0; --k) {
      const auto j = static_cast<std::size_t>(rng.uniform() * static_cast<double>(k + 1));
      std::swap(ts[k], ts[j]);
    }
    const double a = final_estimate(set[i].timestamps, w);
    rel[i] = std::abs(final_estimate(ts, w) - a) / a;
  });
  std::sort(rel.begin(), rel.end());
  double mean = 0.0;
  for (double r : rel) mean += r;
  mean /= static_cast<double>(rel.size());
  return {true, fmt("final estimate change under photon reordering: mean %.4f, median %.4f, "
                    "95th percentile %.4f (relative; measured, not asserted)",
                    mean, rel[rel.size() / 2], rel[rel.size() * 95 / 100])};
}

Outcome rnn_near_crlb(const Context& ctx, ModelCache& cache) {
  const DecayModel m = DecayModel::mono(2.5, 2.0, 0.1673, 50.0);
  const double bound = crlb_point(m, 1024).rel_std;
  MonteCarloOptions mc;
  mc.trials = 3000;
  mc.seed = 4;
  mc.threads = ctx.threads;
  const RnnWeights w = cache.gru(32);
  const MonteCarloResult r = monte_carlo_std(make_estimator("rnn", &w), m, 1024, mc);
  const double rel = std::abs(r.rel_std - bound) / bound;
  return {rel <= 0.25, fmt("GRU-32 rel std %.5f [%.5f, %.5f] vs CRLB %.5f, rel diff %.3f "
                           "(<= 0.25), rel bias %.4f",
                           r.rel_std, r.ci_lo, r.ci_hi, bound, rel, r.bias / 2.5)};
}

Outcome size_ladder_rmse(const Context& ctx, ModelCache& cache) {
  const auto test = cache.dataset(clean_config()).test();
  double rmse[3];
  const std::size_t sizes[3] = {8, 16, 32};
  for (int i = 0; i < 3; ++i) {
    const RnnWeights w = cache.gru(sizes[i]);
    rmse[i] = evaluate_estimator("rnn", make_estimator("rnn", &w), test, ctx.threads).rmse;
  }
  return {rmse[2] <= rmse[1] && rmse[1] <= rmse[0],
          fmt("test RMSE GRU-8 %.4f, GRU-16 %.4f, GRU-32 %.4f (non-increasing)", rmse[0],
              rmse[1], rmse[2])};
}

Outcome noise_ordering(const Context& ctx, ModelCache& cache) {
  const RnnWeights w = cache.gru16_noise();
  const auto set = test_set(5000, 256, 0.05, 13, ctx.threads);
  const double rnn = mape_of("rnn", make_estimator("rnn", &w), set, ctx.threads);
  const double ls = mape_of("lsfit", make_estimator("lsfit"), set, ctx.threads);
  const double star = mape_of("cmm-bgsub", make_estimator("cmm-bgsub"), set, ctx.threads);
  const double cmm = mape_of("cmm", make_estimator("cmm"), set, ctx.threads);
  return {rnn < ls && ls < star && star < cmm,
          fmt("MAPE at 5%% background: RNN %.4f < LS %.4f < CMM* %.4f < CMM %.4f", rnn, ls,
              star, cmm)};
}

// ---------------------------------------------------------------------------
// Determinism through the command-line tool.

int run(const std::string& cmd, const std::string& stdout_path = "/dev/null") {
  return std::system((cmd + " > " + stdout_path + " 2> /dev/null").c_str());
}

std::map<std::string, std::string> tree_bytes(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = read_file(e.path());
  }
  return out;
}

std::vector<std::string> cli_script(const fs::path& exe, const fs::path& d) {
  const std::string x = exe.string();
  const std::string o = d.string();
  return {
      x + " simulate --samples 300 --photons 128 --bg-max 0.05 --tdc-bin 0.05 --seed 5 --out " +
          o + "/d.bin --csv " + o + "/d.csv",
      x + " train --dataset " + o + "/d.bin --hidden 4 --epochs 2 --seed 2 --out " + o +
          "/w.json",
      x + " eval --dataset " + o + "/d.bin --estimator cmm --out " + o + "/e_cmm.csv",
      x + " eval --dataset " + o + "/d.bin --estimator cmm-bgsub --correct-truncation --out " +
          o + "/e_star.csv",
      x + " eval --dataset " + o + "/d.bin --estimator lsfit --t0 estimated --out " + o +
          "/e_ls.csv",
      x + " eval --dataset " + o + "/d.bin --estimator rnn --weights " + o + "/w.json --out " +
          o + "/e_rnn.csv",
      x + " crlb --sweep photons --grid 256 1024 --trials 200 --lsfit-trials 100 --noise 0 "
          "0.05 --out " + o + "/c.csv",
      x + " bench --suite table2 --samples 100 --weights-dir " + o + "/nets --out-dir " + o +
          "/bench",
      x + " quantize --weights " + o + "/w.json --dataset " + o + "/d.bin --limit 20 --golden " +
          o + "/g.txt --out " + o + "/q.bin",
      x + " pipeline --weights " + o + "/q.bin --scene uniform --rate 500 --duration 2e7 "
          "--frame-period 1e7 --events-out " + o + "/ev.bin --stats-out " + o +
          "/stats.txt --out-dir " + o + "/frames",
      x + " verify --dataset " + o + "/d.bin --weights " + o + "/w.json --quantized " + o +
          "/q.bin --golden " + o + "/g.txt",
  };
}

Outcome determinism(const Context& ctx) {
  if (ctx.cli.empty()) return {false, "no --cli given"};
  const fs::path root = ctx.work / "determinism";
  fs::remove_all(root);
  std::vector<std::map<std::string, std::string>> runs;
  // Both runs use the same paths; sidecars record them.
  const fs::path d = root / "run";
  for (const char* tag : {"a", "b"}) {
    fs::create_directories(d / "nets");
    const auto script = cli_script(ctx.cli, d);
    for (std::size_t i = 0; i < script.size(); ++i) {
      if (i == 7) fs::copy_file(d / "w.json", d / "nets" / "gru4.json");
      // verify writes no file; its report is compared instead.
      const bool last = i + 1 == script.size();
      const std::string out = last ? (d / "verify.txt").string() : "/dev/null";
      if (run(script[i], out) != 0) return {false, "command failed: " + script[i]};
    }
    runs.push_back(tree_bytes(d));
    fs::rename(d, root / tag);
  }
  std::size_t differing = 0;
  std::string first;
  std::set<std::string> names;
  for (const auto& [k, v] : runs[0]) names.insert(k);
  for (const auto& [k, v] : runs[1]) names.insert(k);
  for (const std::string& n : names) {
    auto a = runs[0].find(n);
    auto b = runs[1].find(n);
    if (a == runs[0].end() || b == runs[1].end() || a->second != b->second) {
      if (differing++ == 0) first = n;
    }
  }

  // Shipped golden vectors against the shipped quantized weights.
  const QuantizedWeights q = load_quantized(ctx.data / "gru16_q16.bin");
  std::string hash;
  const auto golden = golden_from_text(read_file(ctx.data / "golden_vectors.txt"), &hash);
  const QuantizedGru gru(q);
  std::size_t golden_ok = 0;
  for (const GoldenVector& g : golden) {
    QuantState s = init_quant_state(q);
    for (std::int64_t x : g.inputs) gru.step(s, x);
    if (s.h == g.state && gru.head_raw(s) == g.head) ++golden_ok;
  }
  const bool hash_ok = hash == sha256_hex(read_file(ctx.data / "gru16_q16.bin"));
  const bool pass = differing == 0 && !golden.empty() && golden_ok == golden.size() && hash_ok;
  std::string detail = fmt("%zu subcommands x 2 runs, %zu output files, %zu differ",
                           cli_script(ctx.cli, root).size(), names.size(), differing);
  if (differing) detail += " (first: " + first + ")";
  detail += fmt("; golden vectors %zu/%zu match%s", golden_ok, golden.size(),
                hash_ok ? "" : ", weights hash mismatch");
  return {pass, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flimrnn acceptance run"};
  Context ctx;
  std::string work = "acceptance_work";
  std::string data = FLIM_DATA_DIR;
  std::string cli;
  std::vector<int> only;
  std::string suite = "criteria";
  ctx.threads = std::max(1u, std::thread::hardware_concurrency());
  app.add_option("--work", work, "Cache and scratch directory");
  app.add_option("--data", data, "Directory with the shipped weights and golden vectors");
  app.add_option("--cli", cli, "Path to the flimrnn executable");
  app.add_option("--suite", suite, "criteria (1-11) or modules (checks on trained networks)")
      ->check(CLI::IsMember({"criteria", "modules"}));
  app.add_option("--only", only, "Run only these ids");
  app.add_option("--threads", ctx.threads, "Worker threads (results do not depend on it)");
  app.add_flag("--fresh", ctx.fresh, "Retrain instead of using cached networks");
  CLI11_PARSE(app, argc, argv);
  ctx.work = work;
  ctx.data = data;
  ctx.cli = cli;
  fs::create_directories(ctx.work);

  ModelCache cache(ctx);
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> fn;
  };
  const std::vector<Criterion> modules = {
      {1, "rnn-core: trained GRU-32 accuracy", [&] { return head_gru32(ctx, cache); }},
      {2, "rnn-core: more photons, lower error", [&] { return more_photons(ctx, cache); }},
      {3, "rnn-core: photon order sensitivity", [&] { return permutation(ctx, cache); }},
      {4, "crlb: trained network near the bound", [&] { return rnn_near_crlb(ctx, cache); }},
      {5, "benchmark: RMSE falls with hidden size", [&] { return size_ladder_rmse(ctx, cache); }},
      {6, "benchmark: 5% background ordering", [&] { return noise_ordering(ctx, cache); }},
  };
  const std::vector<Criterion> criteria = {
      {1, "sampler fidelity", [&] { return sampler_fidelity(ctx); }},
      {2, "CRLB baseline", [&] { return crlb_baseline(ctx); }},
      {3, "CMM optimality", [&] { return cmm_optimality(ctx); }},
      {4, "CMM noise fragility", [&] { return cmm_noise_fragility(ctx); }},
      {5, "CMM no-noise accuracy", [&] { return cmm_accuracy(ctx); }},
      {6, "gradient correctness", [&] { return gradient_check(ctx); }},
      {7, "desk-scale training", [&] { return desk_training(ctx, cache); }},
      {8, "noise robustness rank", [&] { return noise_robustness(ctx, cache); }},
      {9, "quantization study", [&] { return quantization(ctx, cache); }},
      {10, "pipeline equivalence and throughput", [&] { return pipeline_equivalence(ctx, cache); }},
      {11, "determinism", [&] { return determinism(ctx); }},
  };

  const bool module_suite = suite == "modules";
  int failed = 0;
  for (const Criterion& c : module_suite ? modules : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!o.pass) ++failed;
    std::printf("[%s] %s%d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL",
                module_suite ? "M" : "", c.id, c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
