// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The flimrnn Authors

#include "flim/estimators.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "flim/error.hpp"

namespace flim {

double wrapped_exponential_mean(double tau, double period, double guard) {
  const double r = period / tau;
  if (r > 700.0) return tau;
  // Delays past period - guard wrap to negative values.
  return tau - period * std::exp(-(period - guard) / tau) / -std::expm1(-r);
}

double invert_wrapped_mean(double mean, double period, double guard) {
  double lo = 1e-3;
  double hi = period;
  if (mean < wrapped_exponential_mean(lo, period, guard) ||
      mean > wrapped_exponential_mean(hi, period, guard)) {
    return -1.0;
  }
  for (int i = 0; i < 200 && hi - lo > 1e-15 * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (wrapped_exponential_mean(mid, period, guard) < mean) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

namespace {

// Sum of photon delays after t0, each wrapped into [-guard, T - guard).
double delay_sum(std::span<const double> timestamps, double t0, double period) {
  const double guard = cmm_guard(period);
  double sum = 0.0;
  for (double t : timestamps) {
    double d = t - t0;
    if (d < -guard) {
      d += period;
    } else if (d >= period - guard) {
      d -= period;
    }
    sum += d;
  }
  return sum;
}

void finish_cmm(EstimateReport& r, double raw, double period, bool correct) {
  r.raw_lifetime = raw;
  if (!(raw > 0.0)) {
    r.ok = false;
    r.lifetime = raw;
    r.message = "mean arrival time not after t0";
    return;
  }
  r.lifetime = raw;
  r.ok = true;
  if (correct) {
    const double tau = invert_wrapped_mean(raw, period, cmm_guard(period));
    if (tau < 0.0) {
      r.ok = false;
      r.message = "mean outside the correctable range";
    } else {
      r.lifetime = tau;
    }
  }
}

}  // namespace

EstimateReport cmm_estimate(std::span<const double> timestamps, double t0,
                            double period, bool correct_truncation) {
  if (timestamps.empty()) throw DomainError("cmm_estimate: empty sequence");
  if (!(t0 >= 0.0 && t0 < period)) throw DomainError("cmm_estimate: t0 outside [0, T)");
  EstimateReport r;
  r.estimator = correct_truncation ? "cmm-corrected" : "cmm";
  r.photons = timestamps.size();
  const double sum = delay_sum(timestamps, t0, period);
  finish_cmm(r, sum / static_cast<double>(timestamps.size()), period, correct_truncation);
  return r;
}

EstimateReport cmm_bg_subtracted(std::span<const double> timestamps,
                                 double t0, double period, std::size_t n_bg,
                                 bool correct_truncation) {
  const std::size_t n = timestamps.size();
  if (n_bg >= n) throw DomainError("cmm_bg_subtracted: n_bg must be < photon count");
  if (!(t0 >= 0.0 && t0 < period)) throw DomainError("cmm_bg_subtracted: t0 outside [0, T)");
  EstimateReport r;
  r.estimator = "cmm-bgsub";
  r.photons = n;
  r.background_subtracted = static_cast<double>(n_bg);
  const double sum = delay_sum(timestamps, t0, period);
  const double nb = static_cast<double>(n_bg);
  // A uniform photon has mean delay period/2 - guard.
  const double mean =
      (sum - nb * (period / 2.0 - cmm_guard(period))) / (static_cast<double>(n) - nb);
  finish_cmm(r, mean, period, correct_truncation);
  return r;
}

Histogram build_histogram(std::span<const double> timestamps,
                          std::size_t n_bins, double period) {
  if (n_bins < 16) throw DomainError("build_histogram: need at least 16 bins");
  if (!(period > 0.0)) throw DomainError("build_histogram: period must be > 0");
  Histogram h;
  h.period = period;
  h.counts.assign(n_bins, 0);
  const double scale = static_cast<double>(n_bins) / period;
  for (double t : timestamps) {
    auto bin = static_cast<long long>(std::floor(t * scale));
    bin = std::clamp<long long>(bin, 0, static_cast<long long>(n_bins) - 1);
    ++h.counts[static_cast<std::size_t>(bin)];
  }
  h.total = timestamps.size();
  return h;
}

double estimate_irf_peak(std::span<const double> timestamps, double period,
                         std::size_t n_bins) {
  const Histogram h = build_histogram(timestamps, n_bins, period);
  const auto it = std::max_element(h.counts.begin(), h.counts.end());
  return h.edge(static_cast<std::size_t>(it - h.counts.begin()));
}

namespace {

struct TailModel {
  std::span<const double> y;
  double w;  // bin width
  std::size_t first;

  double ssr(double A, double tau, double B) const {
    double s = 0.0;
    for (std::size_t k = first; k < y.size(); ++k) {
      const double t = static_cast<double>(k - first) * w;
      const double r = y[k] - (A * std::exp(-t / tau) + B);
      s += r * r;
    }
    return s;
  }
};

// Solves the 3x3 system M x = v by Gaussian elimination with partial
// pivoting. Returns false when singular.
bool solve3(std::array<std::array<double, 3>, 3> M, std::array<double, 3> v,
            std::array<double, 3>& x) {
  for (int c = 0; c < 3; ++c) {
    int p = c;
    for (int r = c + 1; r < 3; ++r) {
      if (std::abs(M[r][c]) > std::abs(M[p][c])) p = r;
    }
    if (!(std::abs(M[p][c]) > 0.0)) return false;
    std::swap(M[p], M[c]);
    std::swap(v[p], v[c]);
    for (int r = c + 1; r < 3; ++r) {
      const double f = M[r][c] / M[c][c];
      for (int k = c; k < 3; ++k) M[r][k] -= f * M[c][k];
      v[r] -= f * v[c];
    }
  }
  for (int c = 2; c >= 0; --c) {
    double s = v[c];
    for (int k = c + 1; k < 3; ++k) s -= M[c][k] * x[k];
    x[c] = s / M[c][c];
  }
  return std::isfinite(x[0]) && std::isfinite(x[1]) && std::isfinite(x[2]);
}

}  // namespace

EstimateReport ls_fit_counts(std::span<const double> y, double bin_width,
                             const LsFitOptions& opts) {
  EstimateReport r;
  r.estimator = "lsfit";
  const double total = std::accumulate(y.begin(), y.end(), 0.0);
  r.photons = static_cast<std::size_t>(std::llround(total));
  if (total < 100.0) {
    r.message = "fewer than 100 counts";
    return r;
  }
  const std::size_t peak =
      static_cast<std::size_t>(std::max_element(y.begin(), y.end()) - y.begin());
  if (y[peak] >= total) {
    r.message = "degenerate histogram: all counts in one bin";
    return r;
  }
  const std::size_t n = y.size();
  if (n - peak - 1 < 8) {
    r.message = "fewer than 8 bins after the peak";
    return r;
  }
  const TailModel model{y, bin_width, peak};

  // Initial values: offset from the last quarter of the fit range, then a
  // log-linear regression on the offset-subtracted leading tail.
  const std::size_t span_len = n - peak;
  const std::size_t tail_len = std::max<std::size_t>(span_len / 4, 1);
  double B = 0.0;
  for (std::size_t k = n - tail_len; k < n; ++k) B += y[k];
  B /= static_cast<double>(tail_len);

  double sw = 0, swt = 0, swl = 0, swtt = 0, swtl = 0;
  for (std::size_t k = peak; k < n; ++k) {
    const double v = y[k] - B;
    if (!(v > 0.0)) break;
    const double t = static_cast<double>(k - peak) * bin_width;
    const double l = std::log(v);
    sw += v;
    swt += v * t;
    swl += v * l;
    swtt += v * t * t;
    swtl += v * t * l;
  }
  double tau = bin_width;
  double A = std::max(y[peak] - B, 1.0);
  const double det = sw * swtt - swt * swt;
  if (sw > 0.0 && det > 0.0) {
    const double slope = (sw * swtl - swt * swl) / det;
    const double icept = (swl - slope * swt) / sw;
    if (slope < 0.0) {
      tau = -1.0 / slope;
      A = std::exp(icept);
    }
  }

  double cur = model.ssr(A, tau, B);
  r.initial_residual = cur;
  double mu = opts.initial_damping;
  bool converged = false;
  std::size_t it = 0;
  for (; it < opts.max_iterations; ++it) {
    std::array<std::array<double, 3>, 3> JtJ{};
    std::array<double, 3> Jtr{};
    for (std::size_t k = peak; k < n; ++k) {
      const double t = static_cast<double>(k - peak) * bin_width;
      const double e = std::exp(-t / tau);
      const std::array<double, 3> J = {e, A * e * t / (tau * tau), 1.0};
      const double res = y[k] - (A * e + B);
      for (int a = 0; a < 3; ++a) {
        Jtr[a] += J[a] * res;
        for (int b = 0; b < 3; ++b) JtJ[a][b] += J[a] * J[b];
      }
    }
    bool accepted = false;
    while (mu < 1e20) {
      auto M = JtJ;
      for (int a = 0; a < 3; ++a) M[a][a] += mu * std::max(JtJ[a][a], 1e-300);
      std::array<double, 3> d{};
      if (solve3(M, Jtr, d)) {
        const double nA = A + d[0], ntau = tau + d[1], nB = B + d[2];
        if (ntau > 0.0) {
          const double next = model.ssr(nA, ntau, nB);
          if (next <= cur) {
            const double rel_step = std::abs(d[1]) / tau;
            const double rel_drop = (cur - next) / std::max(cur, 1e-300);
            A = nA;
            tau = ntau;
            B = nB;
            cur = next;
            mu = std::max(mu / 10.0, 1e-12);
            accepted = true;
            if (rel_step < 1e-10 || rel_drop < 1e-14) converged = true;
            break;
          }
        }
      }
      mu *= 10.0;
    }
    if (!accepted) {
      // No descent direction left at any damping: a stationary point.
      converged = true;
    }
    if (converged) {
      ++it;
      break;
    }
  }
  r.iterations = it;
  r.residual = cur;
  r.lifetime = tau;
  r.amplitude = A;
  r.offset = B;
  r.ok = converged && tau > 0.0 && std::isfinite(tau);
  if (!converged) r.message = "no convergence within iteration limit";
  return r;
}

EstimateReport ls_fit(const Histogram& hist, const LsFitOptions& opts) {
  std::vector<double> y(hist.counts.begin(), hist.counts.end());
  return ls_fit_counts(y, hist.bin_width(), opts);
}

}  // namespace flim
