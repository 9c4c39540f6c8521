// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The flimrnn Authors

#include "flim/crlb.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "flim/error.hpp"
#include "flim/estimators.hpp"
#include "flim/parallel.hpp"
#include "flim/rng.hpp"

namespace flim {

namespace {

std::vector<double> breakpoints(const DecayModel& m) {
  const double T = m.repetition_period;
  const double t0 = m.irf_peak;
  const double s = m.sigma();
  const double tau = m.lifetimes[0];
  std::vector<double> pts{0.0, T, t0};
  // IRF shoulders, folded back into [0, T) when they cross either end.
  for (double k : {0.5, 1.0, 2.0, 4.0, 8.0, 16.0}) {
    for (double x : {t0 - k * s, t0 + k * s}) {
      if (x < 0.0) x += T;
      if (x > T) x -= T;
      pts.push_back(x);
    }
  }
  for (int j = 1; j <= 64; ++j) {
    const double x = t0 + j * tau / 2.0;
    if (x < T) {
      pts.push_back(x);
    } else if (x - T < t0) {
      pts.push_back(x - T);
    }
  }
  std::vector<double> in;
  for (double p : pts) {
    if (p >= 0.0 && p <= T) in.push_back(p);
  }
  std::sort(in.begin(), in.end());
  std::vector<double> out;
  for (double p : in) {
    if (out.empty() || p - out.back() > 1e-12 * T) out.push_back(p);
  }
  if (out.back() != T) out.back() = T;
  return out;
}

}  // namespace

double fisher_information(const DecayModel& model, std::size_t n_photons,
                          const QuadratureOptions& opts) {
  model.validate();
  if (model.lifetimes.size() != 1) {
    throw DomainError("fisher_information: unsupported for multi-exponential models");
  }
  if (n_photons < 1) throw DomainError("fisher_information: need n >= 1");
  const double T = model.repetition_period;
  // density_at requires t < T; the right end of the last piece uses the
  // largest double below T.
  const double t_last = std::nextafter(T, 0.0);
  auto g = [&](double t) {
    t = std::min(t, t_last);
    const double f = density_at(t, model);
    if (!(f > 1e-300)) return 0.0;
    const double d = opts.finite_difference ? density_dtau_fd(t, model)
                                            : density_dtau(t, model);
    return d * d / f;
  };
  const std::vector<double> pts = breakpoints(model);
  auto simpson = [&](int m) {
    double total = 0.0;
    for (std::size_t p = 0; p + 1 < pts.size(); ++p) {
      const double a = pts[p];
      const double h = (pts[p + 1] - a) / m;
      double s = g(a) + g(pts[p + 1]);
      for (int i = 1; i < m; ++i) s += (i % 2 ? 4.0 : 2.0) * g(a + i * h);
      total += s * h / 3.0;
    }
    return total;
  };
  int m = 4;
  double prev = simpson(m);
  for (int level = 0; level < opts.max_doublings; ++level) {
    m *= 2;
    const double cur = simpson(m);
    if (std::abs(cur - prev) <= opts.rel_tol * std::abs(cur)) {
      return static_cast<double>(n_photons) * cur;
    }
    prev = cur;
  }
  return static_cast<double>(n_photons) * prev;
}

CrlbPoint crlb_point(const DecayModel& model, std::size_t n_photons,
                     const QuadratureOptions& opts) {
  CrlbPoint p;
  p.model = model;
  p.photons = n_photons;
  p.fisher = fisher_information(model, n_photons, opts);
  if (!(p.fisher > 0.0) || !std::isfinite(p.fisher)) {
    throw DomainError("crlb_point: Fisher information is not positive and finite");
  }
  p.variance = 1.0 / p.fisher;
  p.rel_std = std::sqrt(p.variance) / model.lifetimes[0];
  return p;
}

LifetimeEstimator make_estimator(const std::string& name, const RnnWeights* weights) {
  if (name == "cmm" || name == "cmm-corrected") {
    const bool correct = name == "cmm-corrected";
    return [correct](std::span<const double> ts, const DecayModel& m) {
      const EstimateReport r = cmm_estimate(ts, m.irf_peak, m.repetition_period, correct);
      return r.ok ? r.lifetime : std::nan("");
    };
  }
  if (name == "cmm-bgsub") {
    return [](std::span<const double> ts, const DecayModel& m) {
      const auto n_bg = static_cast<std::size_t>(
          std::llround(m.background() * static_cast<double>(ts.size())));
      if (n_bg >= ts.size()) return std::nan("");
      const EstimateReport r =
          cmm_bg_subtracted(ts, m.irf_peak, m.repetition_period, n_bg, false);
      return r.ok ? r.lifetime : std::nan("");
    };
  }
  if (name == "lsfit") {
    return [](std::span<const double> ts, const DecayModel& m) {
      const EstimateReport r = ls_fit(build_histogram(ts, 256, m.repetition_period));
      return r.ok ? r.lifetime : std::nan("");
    };
  }
  if (name == "rnn") {
    if (!weights) throw ConfigError("estimator 'rnn' needs a weights file");
    const RnnWeights w = *weights;
    return [w](std::span<const double> ts, const DecayModel&) {
      return final_estimate(ts, w);
    };
  }
  throw ConfigError("unknown estimator '" + name + "'");
}

namespace {

double sample_std(std::span<const double> v, double* mean_out = nullptr) {
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  if (mean_out) *mean_out = mean;
  return v.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
}

}  // namespace

MonteCarloResult monte_carlo_std(const LifetimeEstimator& estimator,
                                 const DecayModel& model, std::size_t n_photons,
                                 const MonteCarloOptions& opts) {
  if (opts.trials < 100) throw DomainError("monte_carlo_std: need at least 100 trials");
  model.validate();
  const double tau = model.lifetimes[0];
  std::vector<double> est(opts.trials);
  parallel_for(opts.trials, opts.threads, [&](std::size_t i) {
    const TimestampSequence s =
        generate_sequence(model, n_photons, derive_seed(opts.seed, "trial", i), opts.tdc_bin);
    est[i] = estimator(s.timestamps, model);
  });
  std::vector<double> ok;
  ok.reserve(est.size());
  for (double e : est) {
    if (std::isfinite(e) && e > 0.0) ok.push_back(e);
  }
  MonteCarloResult r;
  r.trials = opts.trials;
  r.failures = opts.trials - ok.size();
  r.flagged = static_cast<double>(r.failures) > 0.1 * static_cast<double>(opts.trials);
  if (ok.size() < 2) {
    r.flagged = true;
    r.mean = r.std = r.rel_std = r.ci_lo = r.ci_hi = r.bias = std::nan("");
    return r;
  }
  r.std = sample_std(ok, &r.mean);
  r.rel_std = r.std / tau;
  r.bias = r.mean - tau;

  if (opts.bootstrap > 0) {
    Rng rng(derive_seed(opts.seed, "bootstrap"));
    std::vector<double> stds(opts.bootstrap);
    std::vector<double> resample(ok.size());
    for (std::size_t b = 0; b < opts.bootstrap; ++b) {
      for (double& x : resample) x = ok[rng.below(ok.size())];
      stds[b] = sample_std(resample) / tau;
    }
    std::sort(stds.begin(), stds.end());
    auto pct = [&](double q) {
      const double pos = q * static_cast<double>(stds.size() - 1);
      const auto lo = static_cast<std::size_t>(std::floor(pos));
      const std::size_t hi = std::min(lo + 1, stds.size() - 1);
      return stds[lo] + (pos - static_cast<double>(lo)) * (stds[hi] - stds[lo]);
    };
    r.ci_lo = pct(0.025);
    r.ci_hi = pct(0.975);
  } else {
    r.ci_lo = r.ci_hi = r.rel_std;
  }
  return r;
}

std::vector<double> default_grid(SweepAxis axis) {
  if (axis == SweepAxis::kLifetime) {
    return {0.2, 0.4, 0.6, 0.8, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0};
  }
  return {64, 128, 256, 512, 1024, 2048, 4096};
}

std::vector<SweepRow> sweep(const SweepConfig& config, const RnnWeights* weights) {
  if (config.grid.empty()) throw ConfigError("sweep: empty grid");
  std::vector<SweepRow> rows;
  std::size_t gi = 0;
  for (double v : config.grid) {
    DecayModel m = config.base;
    m.intensities = {1.0 - config.background, config.background};
    std::size_t n = config.photons;
    if (config.axis == SweepAxis::kLifetime) {
      m.lifetimes = {v};
    } else {
      if (!(v >= 1.0)) throw ConfigError("sweep: photon counts must be >= 1");
      n = static_cast<std::size_t>(std::llround(v));
    }
    const double bound = crlb_point(m, n).rel_std;
    rows.push_back({v, "crlb", bound, bound, bound, bound, 0.0, 0.0});
    for (const std::string& method : config.methods) {
      MonteCarloOptions mc = config.mc;
      mc.seed = derive_seed(config.mc.seed, method, gi);
      if (method == "lsfit") mc.trials = config.lsfit_trials;
      const MonteCarloResult r = monte_carlo_std(make_estimator(method, weights), m, n, mc);
      rows.push_back({v, method, r.rel_std, r.ci_lo, r.ci_hi, bound,
                      r.bias / m.lifetimes[0],
                      static_cast<double>(r.failures) / static_cast<double>(r.trials)});
    }
    ++gi;
  }
  return rows;
}

std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os.precision(10);
  os << "axis_value,method,rel_std,ci_lo,ci_hi,crlb_bound,rel_bias,failure_rate\n";
  for (const SweepRow& r : rows) {
    os << r.axis_value << ',' << r.method << ',' << r.rel_std << ',' << r.ci_lo << ','
       << r.ci_hi << ',' << r.crlb_bound << ',' << r.rel_bias << ',' << r.failure_rate << '\n';
  }
  return os.str();
}

}  // namespace flim
