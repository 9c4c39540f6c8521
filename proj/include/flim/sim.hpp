// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The flimrnn Authors

#ifndef FLIM_SIM_HPP
#define FLIM_SIM_HPP

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flim/rng.hpp"

namespace flim {

/// Generative parameters of one pixel. Times are in nanoseconds.
///
/// A photon comes from fluorescence component i with probability
/// intensities[i] and from uniform background with probability
/// intensities.back(). Fluorescence delays are exponential(lifetimes[i])
/// convolved with a Gaussian IRF centred at irf_peak; arrival times are
/// folded onto [0, repetition_period).
struct DecayModel {
  std::vector<double> lifetimes;
  std::vector<double> intensities;
  double irf_peak = 0.0;
  double irf_fwhm = 0.1673;
  double repetition_period = 50.0;

  /// Mono-exponential model with background weight `background`.
  static DecayModel mono(double lifetime, double irf_peak, double irf_fwhm,
                         double period, double background = 0.0);

  /// Throws DomainError when an invariant does not hold.
  void validate() const;

  double background() const { return intensities.back(); }
  double sigma() const;

  bool operator==(const DecayModel&) const = default;
};

/// Photon arrival times of one sample, in arrival order.
struct TimestampSequence {
  std::vector<double> timestamps;
  std::optional<DecayModel> truth;
  std::uint64_t seed = 0;

  std::size_t size() const { return timestamps.size(); }
  /// Lifetime of the (first) fluorescence component of the ground truth.
  double true_lifetime() const;
};

/// Gaussian sigma from the full width at half maximum.
double sigma_from_fwhm(double fwhm);

/// One photon arrival time drawn from the mixture model.
double sample_timestamp(const DecayModel& model, Rng& rng);

/// n_photons independent draws. Deterministic given `seed`. A positive
/// `tdc_bin` floors every timestamp onto that grid.
TimestampSequence generate_sequence(const DecayModel& model,
                                    std::size_t n_photons, std::uint64_t seed,
                                    double tdc_bin = 0.0);

/// Mixture density at t in [0, T).
double density_at(double t, const DecayModel& model);

/// d(density)/d(lifetime) for a mono-exponential model, analytic.
double density_dtau(double t, const DecayModel& model);

/// Same derivative by central finite differences with relative step h.
double density_dtau_fd(double t, const DecayModel& model, double h = 1e-5);

/// Density of one exponentially modified Gaussian folded onto [0, T), and
/// its lifetime derivative. Exposed for the CRLB module and tests.
double wrapped_emg(double t, double lifetime, double t0, double sigma,
                   double period);
double wrapped_emg_dtau(double t, double lifetime, double t0, double sigma,
                        double period);

/// exp(x^2) * erfc(x), accurate for large x.
double erfcx(double x);

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct SplitRatios {
  double train = 0.8;
  double eval = 0.1;
  double test = 0.1;
};

struct DatasetConfig {
  std::size_t samples = 50000;
  std::size_t photons = 256;
  Range lifetime{0.2, 5.0};
  Range background{0.0, 0.0};
  Range irf_peak{0.0, 5.0};
  double period = 50.0;
  double irf_fwhm = 0.1673;
  double tdc_bin = 0.0;  // 0 = continuous timestamps
  std::uint64_t seed = 1;
  SplitRatios split{};

  void validate() const;
  /// Stable "key = value" text, one entry per line, units in key names.
  std::string to_text() const;
  static DatasetConfig from_text(const std::string& text);

  /// Paper-scale preset (500k x 1024) and the smaller default.
  static DatasetConfig paper_scale();
  static DatasetConfig desk_scale();
};

struct Dataset {
  DatasetConfig config;
  std::vector<TimestampSequence> samples;

  std::span<const TimestampSequence> train() const;
  std::span<const TimestampSequence> eval() const;
  std::span<const TimestampSequence> test() const;

 private:
  std::size_t train_end() const;
  std::size_t eval_end() const;
};

/// Draws per-sample parameters then photons. Sample i uses the stream
/// derive_seed(config.seed, "sample", i) so the output is independent of
/// `threads`.
Dataset generate_dataset(const DatasetConfig& config, unsigned threads = 1);

/// Model drawn for sample i of a dataset (parameters only, no photons).
DecayModel draw_sample_model(const DatasetConfig& config, Rng& rng);

}  // namespace flim

#endif  // FLIM_SIM_HPP
