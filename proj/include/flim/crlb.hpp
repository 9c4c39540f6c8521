// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The flimrnn Authors

#ifndef FLIM_CRLB_HPP
#define FLIM_CRLB_HPP

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "flim/rnn.hpp"
#include "flim/sim.hpp"

namespace flim {

struct QuadratureOptions {
  double rel_tol = 1e-8;
  int max_doublings = 16;
  /// Use the finite-difference lifetime derivative instead of the analytic one.
  bool finite_difference = false;
};

/// Fisher information of the lifetime carried by n photons:
/// n * integral over [0, T) of (df/dtau)^2 / f. The IRF peak, width and
/// background weight are treated as known. Composite Simpson on pieces
/// split at t0, t0 +- k sigma and multiples of tau after t0, doubled until
/// the total changes by less than rel_tol. Mono-exponential only.
double fisher_information(const DecayModel& model, std::size_t n_photons,
                          const QuadratureOptions& opts = {});

struct CrlbPoint {
  DecayModel model;
  std::size_t photons = 0;
  double fisher = 0.0;
  double variance = 0.0;  // 1 / fisher
  double rel_std = 0.0;   // sqrt(variance) / tau
};

CrlbPoint crlb_point(const DecayModel& model, std::size_t n_photons,
                     const QuadratureOptions& opts = {});

/// Lifetime estimate from one sequence. The generating model is passed so
/// that nuisance parameters (t0, background weight) can be used as known.
/// A non-finite or non-positive return counts as a failure.
using LifetimeEstimator =
    std::function<double(std::span<const double> timestamps, const DecayModel& model)>;

/// Named estimators: cmm, cmm-corrected, cmm-bgsub, lsfit (256 bins), and
/// rnn (needs weights).
LifetimeEstimator make_estimator(const std::string& name,
                                 const RnnWeights* weights = nullptr);

struct MonteCarloOptions {
  std::size_t trials = 3000;
  std::size_t bootstrap = 1000;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  double tdc_bin = 0.0;
};

struct MonteCarloResult {
  std::size_t trials = 0;
  std::size_t failures = 0;
  double mean = 0.0;
  double std = 0.0;
  double rel_std = 0.0;  // std / tau
  double ci_lo = 0.0;    // 95% bootstrap interval of rel_std
  double ci_hi = 0.0;
  double bias = 0.0;     // mean - tau
  bool flagged = false;  // failure rate above 10%
};

/// Runs the estimator on independent sequences. Trial i uses
/// derive_seed(seed, "trial", i); the result does not depend on threads.
MonteCarloResult monte_carlo_std(const LifetimeEstimator& estimator,
                                 const DecayModel& model, std::size_t n_photons,
                                 const MonteCarloOptions& opts);

enum class SweepAxis { kLifetime, kPhotons };

struct SweepConfig {
  SweepAxis axis = SweepAxis::kLifetime;
  std::vector<double> grid;
  DecayModel base = DecayModel::mono(2.5, 2.0, 0.1673, 50.0);
  std::size_t photons = 1024;  // fixed count for the lifetime axis
  double background = 0.0;
  std::vector<std::string> methods{"cmm", "lsfit"};
  MonteCarloOptions mc{};
  /// Trial count for lsfit, which is much slower.
  std::size_t lsfit_trials = 1000;
};

struct SweepRow {
  double axis_value = 0.0;
  std::string method;
  double rel_std = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double crlb_bound = 0.0;
  double rel_bias = 0.0;
  double failure_rate = 0.0;
};

/// One row per (grid value, method), plus a "crlb" row per grid value
/// whose rel_std is the bound itself.
std::vector<SweepRow> sweep(const SweepConfig& config,
                            const RnnWeights* weights = nullptr);

/// Header: axis_value,method,rel_std,ci_lo,ci_hi,crlb_bound,rel_bias,failure_rate
std::string sweep_to_csv(const std::vector<SweepRow>& rows);

/// The default grids: 0.2..5 ns lifetimes and 64..4096 photons.
std::vector<double> default_grid(SweepAxis axis);

}  // namespace flim

#endif  // FLIM_CRLB_HPP
