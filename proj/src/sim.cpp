// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The flimrnn Authors

#include "flim/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <json.hpp>

#include "flim/error.hpp"
#include "flim/parallel.hpp"

namespace flim {

namespace {

constexpr double kSqrt2 = std::numbers::sqrt2;
const double kInvSqrtPi = 1.0 / std::sqrt(std::numbers::pi);
const double kInvSqrt2Pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);

// Below this sigma the IRF is treated as a delta function.
constexpr double kMinSigma = 1e-300;

double wrap_into_period(double x, double period) {
  double t = std::fmod(x, period);
  if (t < 0.0) t += period;
  if (t >= period) t = std::nextafter(period, 0.0);
  return t;
}

// Unwrapped EMG density at x and, optionally, d/dlambda where
// lambda = 1/lifetime.
//   f = (lambda/2) exp(lambda (t0 - x) + lambda^2 sigma^2 / 2) erfc(z)
//   z = (t0 + lambda sigma^2 - x) / (sqrt2 sigma)
// For z > 0 the product is rewritten as
//   (lambda/2) exp(-(x - t0)^2 / (2 sigma^2)) erfcx(z)
// which cannot overflow.
struct EmgValue {
  double f = 0.0;
  double df_dlambda = 0.0;
};

EmgValue emg(double x, double lambda, double t0, double sigma) {
  EmgValue out;
  const double d = x - t0;
  if (sigma < kMinSigma) {
    if (d < 0.0) return out;
    out.f = lambda * std::exp(-lambda * d);
    out.df_dlambda = out.f * (1.0 / lambda - d);
    return out;
  }
  const double z = (lambda * sigma * sigma - d) / (kSqrt2 * sigma);
  const double gauss = std::exp(-0.5 * (d / sigma) * (d / sigma));
  if (z > 0.0) {
    out.f = 0.5 * lambda * gauss * erfcx(z);
  } else {
    out.f = 0.5 * lambda *
            std::exp(-lambda * d + 0.5 * lambda * lambda * sigma * sigma) *
            std::erfc(z);
  }
  const double phi = gauss * kInvSqrt2Pi / sigma;
  out.df_dlambda = out.f * (1.0 / lambda - d + lambda * sigma * sigma) -
                   lambda * sigma * sigma * phi;
  return out;
}

// Sum of EMG images x = t + k T over all integers k. Images far to the right
// of the IRF peak are pure exponentials and are summed as a geometric series.
EmgValue wrapped(double t, double lifetime, double t0, double sigma,
                 double period) {
  const double lambda = 1.0 / lifetime;
  const double ls2 = lambda * sigma * sigma;
  // Beyond this offset erfc(z) == 2 in double precision.
  const double tail_start = t0 + ls2 + 12.0 * sigma;

  EmgValue sum;
  // Left images (k < 0): only the Gaussian's left tail reaches them.
  for (int k = -1;; --k) {
    const double x = t + k * period;
    const EmgValue v = emg(x, lambda, t0, sigma);
    sum.f += v.f;
    sum.df_dlambda += v.df_dlambda;
    if (v.f < 1e-300 || k < -64) break;
  }
  long k = 0;
  for (;; ++k) {
    const double x = t + static_cast<double>(k) * period;
    if (x > tail_start) break;
    const EmgValue v = emg(x, lambda, t0, sigma);
    sum.f += v.f;
    sum.df_dlambda += v.df_dlambda;
  }
  // Geometric tail for images k, k+1, ...
  const double xk = t + static_cast<double>(k) * period;
  const double q = std::exp(-lambda * period);
  const double head =
      lambda * std::exp(0.5 * lambda * ls2 - lambda * (xk - t0)) / (1.0 - q);
  if (head > 0.0) {
    const double dlog = 1.0 / lambda + ls2 - (xk - t0) - period * q / (1.0 - q);
    sum.f += head;
    sum.df_dlambda += head * dlog;
  }
  return sum;
}

void require_in_period(double t, const DecayModel& model) {
  if (!(t >= 0.0 && t < model.repetition_period)) {
    throw DomainError("density: t outside [0, T)");
  }
}

}  // namespace

double erfcx(double x) {
  if (x < 5.0) return std::exp(x * x) * std::erfc(x);
  // Continued fraction, evaluated bottom-up:
  // erfcx(x) = 1/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
  double frac = x;
  for (int n = 60; n >= 1; --n) frac = x + (0.5 * n) / frac;
  return kInvSqrtPi / frac;
}

double sigma_from_fwhm(double fwhm) {
  if (!(fwhm > 0.0)) throw DomainError("sigma_from_fwhm: fwhm must be > 0");
  return fwhm / (2.0 * std::sqrt(2.0 * std::numbers::ln2));
}

DecayModel DecayModel::mono(double lifetime, double irf_peak, double irf_fwhm,
                            double period, double background) {
  DecayModel m;
  m.lifetimes = {lifetime};
  m.intensities = {1.0 - background, background};
  m.irf_peak = irf_peak;
  m.irf_fwhm = irf_fwhm;
  m.repetition_period = period;
  return m;
}

double DecayModel::sigma() const { return sigma_from_fwhm(irf_fwhm); }

void DecayModel::validate() const {
  if (lifetimes.empty()) throw DomainError("DecayModel: no lifetimes");
  for (double tau : lifetimes) {
    if (!(tau > 0.0)) throw DomainError("DecayModel: lifetime must be > 0");
  }
  if (!(repetition_period > 0.0)) {
    throw DomainError("DecayModel: repetition_period must be > 0");
  }
  if (!(irf_fwhm > 0.0)) throw DomainError("DecayModel: irf_fwhm must be > 0");
  if (intensities.size() != lifetimes.size() + 1) {
    throw DomainError("DecayModel: need one intensity per lifetime plus background");
  }
  double total = 0.0;
  for (double p : intensities) {
    if (!(p >= 0.0)) throw DomainError("DecayModel: negative intensity");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-12) {
    throw DomainError("DecayModel: intensities must sum to 1");
  }
  if (!(irf_peak >= 0.0 && irf_peak < repetition_period)) {
    throw DomainError("DecayModel: irf_peak outside [0, T)");
  }
}

double TimestampSequence::true_lifetime() const {
  if (!truth) throw ContractViolation("sequence has no ground truth");
  return truth->lifetimes.front();
}

double sample_timestamp(const DecayModel& model, Rng& rng) {
  const double u = rng.uniform();
  const std::size_t n_fluo = model.lifetimes.size();
  double acc = 0.0;
  std::size_t k = n_fluo;  // background unless a fluorescence bucket is hit
  for (std::size_t i = 0; i < n_fluo; ++i) {
    acc += model.intensities[i];
    if (u < acc) {
      k = i;
      break;
    }
  }
  const double period = model.repetition_period;
  if (k == n_fluo) return rng.uniform() * period;
  const double fluo = rng.exponential(model.lifetimes[k]);
  const double irf = rng.normal(model.irf_peak, model.sigma());
  return wrap_into_period(fluo + irf, period);
}

TimestampSequence generate_sequence(const DecayModel& model,
                                    std::size_t n_photons, std::uint64_t seed,
                                    double tdc_bin) {
  if (n_photons == 0) throw DomainError("generate_sequence: n_photons must be >= 1");
  model.validate();
  TimestampSequence seq;
  seq.truth = model;
  seq.seed = seed;
  seq.timestamps.resize(n_photons);
  Rng rng(seed);
  for (auto& t : seq.timestamps) {
    t = sample_timestamp(model, rng);
    if (tdc_bin > 0.0) t = std::floor(t / tdc_bin) * tdc_bin;
  }
  return seq;
}

double wrapped_emg(double t, double lifetime, double t0, double sigma,
                   double period) {
  return wrapped(t, lifetime, t0, sigma, period).f;
}

double wrapped_emg_dtau(double t, double lifetime, double t0, double sigma,
                        double period) {
  const double lambda = 1.0 / lifetime;
  // d/dtau = -lambda^2 d/dlambda
  return -lambda * lambda *
         wrapped(t, lifetime, t0, sigma, period).df_dlambda;
}

double density_at(double t, const DecayModel& model) {
  require_in_period(t, model);
  const double sigma = model.sigma();
  double f = model.background() / model.repetition_period;
  for (std::size_t i = 0; i < model.lifetimes.size(); ++i) {
    if (model.intensities[i] == 0.0) continue;
    f += model.intensities[i] * wrapped_emg(t, model.lifetimes[i],
                                            model.irf_peak, sigma,
                                            model.repetition_period);
  }
  return f;
}

double density_dtau(double t, const DecayModel& model) {
  require_in_period(t, model);
  if (model.lifetimes.size() != 1) {
    throw DomainError("density_dtau: mono-exponential models only");
  }
  return model.intensities[0] *
         wrapped_emg_dtau(t, model.lifetimes[0], model.irf_peak, model.sigma(),
                          model.repetition_period);
}

double density_dtau_fd(double t, const DecayModel& model, double h) {
  DecayModel up = model;
  DecayModel dn = model;
  const double step = h * model.lifetimes[0];
  up.lifetimes[0] += step;
  dn.lifetimes[0] -= step;
  return (density_at(t, up) - density_at(t, dn)) / (2.0 * step);
}

// ---------------------------------------------------------------------------
// Datasets

void DatasetConfig::validate() const {
  auto check_range = [](const Range& r, const char* name) {
    if (!(r.lo <= r.hi)) {
      throw ConfigError(std::string("dataset config: inverted range ") + name);
    }
  };
  if (samples == 0) throw ConfigError("dataset config: samples must be > 0");
  if (photons == 0) throw ConfigError("dataset config: photons must be > 0");
  check_range(lifetime, "lifetime");
  check_range(background, "background");
  check_range(irf_peak, "irf_peak");
  if (!(lifetime.lo > 0.0)) throw ConfigError("dataset config: lifetime must be > 0");
  if (!(background.lo >= 0.0 && background.hi <= 1.0)) {
    throw ConfigError("dataset config: background outside [0, 1]");
  }
  if (!(period > 0.0)) throw ConfigError("dataset config: period must be > 0");
  if (!(irf_fwhm > 0.0)) throw ConfigError("dataset config: fwhm must be > 0");
  if (!(irf_peak.lo >= 0.0 && irf_peak.hi < period)) {
    throw ConfigError("dataset config: irf_peak outside [0, T)");
  }
  if (tdc_bin < 0.0) throw ConfigError("dataset config: tdc bin must be >= 0");
  const double s = split.train + split.eval + split.test;
  if (split.train < 0 || split.eval < 0 || split.test < 0 ||
      std::abs(s - 1.0) > 1e-9) {
    throw ConfigError("dataset config: split ratios must be >= 0 and sum to 1");
  }
}

std::string DatasetConfig::to_text() const {
  nlohmann::ordered_json j;
  j["samples"] = samples;
  j["photons_per_sample"] = photons;
  j["lifetime_min_ns"] = lifetime.lo;
  j["lifetime_max_ns"] = lifetime.hi;
  j["background_min"] = background.lo;
  j["background_max"] = background.hi;
  j["irf_peak_min_ns"] = irf_peak.lo;
  j["irf_peak_max_ns"] = irf_peak.hi;
  j["period_ns"] = period;
  j["irf_fwhm_ns"] = irf_fwhm;
  j["tdc_bin_ns"] = tdc_bin;
  j["seed"] = seed;
  j["prng"] = "xoshiro256** seeded by splitmix64; sample i uses derive_seed(seed, \"sample\", i)";
  j["split_train"] = split.train;
  j["split_eval"] = split.eval;
  j["split_test"] = split.test;
  return j.dump(2);
}

DatasetConfig DatasetConfig::from_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("dataset config: ") + e.what());
  }
  DatasetConfig c;
  auto get = [&](const char* key, auto& out) {
    if (!j.contains(key)) throw FormatError(std::string("dataset config: missing ") + key);
    try {
      j.at(key).get_to(out);
    } catch (const nlohmann::json::exception&) {
      throw FormatError(std::string("dataset config: bad value for ") + key);
    }
  };
  get("samples", c.samples);
  get("photons_per_sample", c.photons);
  get("lifetime_min_ns", c.lifetime.lo);
  get("lifetime_max_ns", c.lifetime.hi);
  get("background_min", c.background.lo);
  get("background_max", c.background.hi);
  get("irf_peak_min_ns", c.irf_peak.lo);
  get("irf_peak_max_ns", c.irf_peak.hi);
  get("period_ns", c.period);
  get("irf_fwhm_ns", c.irf_fwhm);
  get("tdc_bin_ns", c.tdc_bin);
  get("seed", c.seed);
  get("split_train", c.split.train);
  get("split_eval", c.split.eval);
  get("split_test", c.split.test);
  return c;
}

DatasetConfig DatasetConfig::paper_scale() {
  DatasetConfig c;
  c.samples = 500000;
  c.photons = 1024;
  return c;
}

DatasetConfig DatasetConfig::desk_scale() { return DatasetConfig{}; }

std::size_t Dataset::train_end() const {
  return static_cast<std::size_t>(
      std::llround(config.split.train * static_cast<double>(samples.size())));
}

std::size_t Dataset::eval_end() const {
  const double frac = config.split.train + config.split.eval;
  return std::min(samples.size(),
                  static_cast<std::size_t>(std::llround(
                      frac * static_cast<double>(samples.size()))));
}

std::span<const TimestampSequence> Dataset::train() const {
  return std::span(samples).subspan(0, train_end());
}

std::span<const TimestampSequence> Dataset::eval() const {
  return std::span(samples).subspan(train_end(), eval_end() - train_end());
}

std::span<const TimestampSequence> Dataset::test() const {
  return std::span(samples).subspan(eval_end());
}

DecayModel draw_sample_model(const DatasetConfig& config, Rng& rng) {
  const double tau = rng.uniform(config.lifetime.lo, config.lifetime.hi);
  const double t0 = rng.uniform(config.irf_peak.lo, config.irf_peak.hi);
  const double bg = rng.uniform(config.background.lo, config.background.hi);
  return DecayModel::mono(tau, t0, config.irf_fwhm, config.period, bg);
}

Dataset generate_dataset(const DatasetConfig& config, unsigned threads) {
  config.validate();
  Dataset ds;
  ds.config = config;
  ds.samples.resize(config.samples);
  parallel_for(config.samples, threads, [&](std::size_t i) {
    const std::uint64_t seed = derive_seed(config.seed, "sample", i);
    Rng rng(seed);
    const DecayModel model = draw_sample_model(config, rng);
    // Photons come from a second stream so that parameters and photons do
    // not interleave.
    ds.samples[i] = generate_sequence(model, config.photons,
                                      derive_seed(seed, "photons"),
                                      config.tdc_bin);
  });
  return ds;
}

}  // namespace flim
