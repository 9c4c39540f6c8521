// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The flimrnn Authors

#include "flim/benchmark.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "flim/error.hpp"
#include "flim/hash.hpp"
#include "flim/parallel.hpp"

namespace flim {

MetricReport compute_metrics(std::span<const double> truths,
                             std::span<const double> estimates) {
  if (truths.size() != estimates.size()) {
    throw DomainError("compute_metrics: truths and estimates differ in length");
  }
  if (truths.empty()) throw DomainError("compute_metrics: empty input");
  double se = 0.0, ae = 0.0, ape = 0.0;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    const double y = truths[i];
    if (!(y > 0.0)) throw DomainError("compute_metrics: truth must be > 0");
    const double e = y - estimates[i];
    se += e * e;
    ae += std::abs(e);
    ape += std::abs(e / y);
  }
  const double n = static_cast<double>(truths.size());
  MetricReport r;
  r.samples = truths.size();
  r.rmse = std::sqrt(se / n);
  r.rmse_literal = std::sqrt(se) / n;
  r.mae = ae / n;
  r.mape = ape / n;
  return r;
}

std::string sequences_hash(std::span<const TimestampSequence> samples) {
  Sha256 h;
  const std::uint64_t count = samples.size();
  h.update(&count, sizeof count);
  for (const TimestampSequence& s : samples) {
    const double tau = s.truth ? s.true_lifetime() : 0.0;
    const std::uint64_t n = s.timestamps.size();
    h.update(&tau, sizeof tau);
    h.update(&n, sizeof n);
    h.update(s.timestamps.data(), s.timestamps.size() * sizeof(double));
  }
  return h.digest_hex();
}

MetricReport evaluate_estimator(const std::string& name,
                                const LifetimeEstimator& estimator,
                                std::span<const TimestampSequence> samples,
                                unsigned threads) {
  const auto start = std::chrono::steady_clock::now();
  std::vector<double> truth(samples.size()), est(samples.size());
  std::vector<char> failed(samples.size(), 0);
  parallel_for(samples.size(), threads, [&](std::size_t i) {
    const TimestampSequence& s = samples[i];
    if (!s.truth) throw ContractViolation("evaluate_estimator: sample without ground truth");
    truth[i] = s.true_lifetime();
    const double e = estimator(s.timestamps, *s.truth);
    if (std::isfinite(e)) {
      est[i] = e;
    } else {
      est[i] = 0.0;
      failed[i] = 1;
    }
  });
  MetricReport r = compute_metrics(truth, est);
  r.estimator = name;
  for (char f : failed) r.failures += f ? 1 : 0;
  r.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

TableConfig TableConfig::table1(std::size_t samples) {
  TableConfig c;
  c.test_data.samples = samples;
  c.test_data.photons = 1024;
  c.test_data.seed = 1001;
  c.test_data.split = {0.0, 0.0, 1.0};
  c.noise_levels = {0.0};
  c.estimators = {"lsfit", "cmm"};
  return c;
}

TableConfig TableConfig::table2(std::size_t samples) {
  TableConfig c = table1(samples);
  c.test_data.seed = 1002;
  c.noise_levels = {0.01, 0.05};
  c.estimators = {"lsfit", "cmm", "cmm-bgsub"};
  return c;
}

std::vector<MetricReport> run_table(const TableConfig& config) {
  std::vector<MetricReport> rows;
  for (double noise : config.noise_levels) {
    DatasetConfig dc = config.test_data;
    dc.background = {noise, noise};
    const Dataset data = generate_dataset(dc, config.threads);
    const std::span<const TimestampSequence> set(data.samples);
    const std::string hash = sequences_hash(set);
    auto add = [&](const std::string& name, const LifetimeEstimator& est) {
      if (sequences_hash(set) != hash) {
        throw ContractViolation("run_table: test set changed between estimators");
      }
      MetricReport r = evaluate_estimator(name, est, set, config.threads);
      r.noise = noise;
      r.dataset_hash = hash;
      rows.push_back(std::move(r));
    };
    for (const std::string& name : config.estimators) add(name, make_estimator(name));
    for (const NamedWeights& nw : config.networks) {
      add(nw.name, make_estimator("rnn", &nw.weights));
    }
  }
  return rows;
}

std::string metrics_to_csv(const std::vector<MetricReport>& rows) {
  std::ostringstream os;
  os.precision(10);
  os << "estimator,noise,samples,failures,rmse,mae,mape,rmse_literal,dataset_hash\n";
  for (const MetricReport& r : rows) {
    os << r.estimator << ',' << r.noise << ',' << r.samples << ',' << r.failures << ','
       << r.rmse << ',' << r.mae << ',' << r.mape << ',' << r.rmse_literal << ','
       << r.dataset_hash << '\n';
  }
  return os.str();
}

std::string metrics_summary(const std::vector<MetricReport>& rows) {
  std::string out = "estimator           noise    RMSE      MAE       MAPE      failures\n";
  char line[160];
  for (const MetricReport& r : rows) {
    std::snprintf(line, sizeof line, "%-18s  %5.3f  %8.4f  %8.4f  %8.4f  %zu\n",
                  r.estimator.c_str(), r.noise, r.rmse, r.mae, r.mape, r.failures);
    out += line;
  }
  return out;
}

}  // namespace flim
