// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The flimrnn Authors

#ifndef FLIM_ESTIMATORS_HPP
#define FLIM_ESTIMATORS_HPP

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace flim {

/// Uniform histogram over [0, period).
struct Histogram {
  double period = 50.0;
  std::vector<std::uint64_t> counts;
  std::uint64_t total = 0;

  std::size_t bins() const { return counts.size(); }
  double bin_width() const { return period / static_cast<double>(counts.size()); }
  double bin_center(std::size_t i) const {
    return (static_cast<double>(i) + 0.5) * bin_width();
  }
  double edge(std::size_t i) const { return static_cast<double>(i) * bin_width(); }
};

/// Result of one lifetime estimate. Fields not used by an estimator stay 0.
struct EstimateReport {
  std::string estimator;
  bool ok = false;
  double lifetime = 0.0;      // ns, final estimate
  double raw_lifetime = 0.0;  // CMM before truncation correction
  double amplitude = 0.0;     // LS
  double offset = 0.0;        // LS
  double background_subtracted = 0.0;  // CMM*: photons removed
  std::size_t photons = 0;
  std::size_t iterations = 0;
  double initial_residual = 0.0;
  double residual = 0.0;
  std::string message;
};

/// Mean of an exponential delay with lifetime tau wrapped into
/// [-guard, period - guard): tau - period e^(guard/tau) / (e^(period/tau) - 1).
/// guard = 0 is the plain decay cut at the period.
double wrapped_exponential_mean(double tau, double period, double guard = 0.0);

/// Inverts wrapped_exponential_mean by bisection on [1e-3, period].
/// Returns a negative value when `mean` is outside the attainable range.
double invert_wrapped_mean(double mean, double period, double guard = 0.0);

/// The center-of-mass window opens this long before t0 (period / 50), so
/// IRF jitter that pushes a photon ahead of a pulse near 0 wraps back.
inline double cmm_guard(double period) { return period / 50.0; }

/// Center-of-mass: mean photon delay after t0, optionally corrected for the
/// bias of a decay truncated at the period. Delays are taken on the circle,
/// wrapped into [-cmm_guard(T), T - cmm_guard(T)).
EstimateReport cmm_estimate(std::span<const double> timestamps, double t0,
                            double period, bool correct_truncation = false);

/// Center-of-mass with a known number of background photons removed, each
/// assumed to contribute the mean delay of a uniform photon,
/// period/2 - cmm_guard(period).
EstimateReport cmm_bg_subtracted(std::span<const double> timestamps,
                                 double t0, double period, std::size_t n_bg,
                                 bool correct_truncation = false);

Histogram build_histogram(std::span<const double> timestamps,
                          std::size_t n_bins, double period);

/// Crude IRF peak guess: center of the fullest bin of a histogram, shifted
/// back by half a bin.
double estimate_irf_peak(std::span<const double> timestamps, double period,
                         std::size_t n_bins = 256);

struct LsFitOptions {
  std::size_t max_iterations = 200;
  double initial_damping = 1e-3;
};

/// Tail fit c(t) = A exp(-(t - t_peak)/tau) + B from the histogram peak to
/// the end, by Levenberg-Marquardt on unweighted squared residuals.
EstimateReport ls_fit(const Histogram& hist, const LsFitOptions& opts = {});

/// Same fit on real-valued bin contents.
EstimateReport ls_fit_counts(std::span<const double> counts, double bin_width,
                             const LsFitOptions& opts = {});

}  // namespace flim

#endif  // FLIM_ESTIMATORS_HPP
