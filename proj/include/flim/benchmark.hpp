// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The flimrnn Authors

#ifndef FLIM_BENCHMARK_HPP
#define FLIM_BENCHMARK_HPP

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "flim/crlb.hpp"
#include "flim/rnn.hpp"
#include "flim/sim.hpp"

namespace flim {

struct MetricReport {
  std::string estimator;
  double noise = 0.0;  // background weight of the test set
  std::size_t samples = 0;
  std::size_t failures = 0;
  double rmse = 0.0;          // sqrt(mean squared error)
  double rmse_literal = 0.0;  // sqrt(sum of squared errors) / N
  double mae = 0.0;
  double mape = 0.0;
  std::string dataset_hash;
  double runtime_seconds = 0.0;  // not written to CSV
};

/// Throws DomainError on length mismatch, empty input or a truth <= 0.
MetricReport compute_metrics(std::span<const double> truths,
                             std::span<const double> estimates);

/// Content hash of the timestamps and true lifetimes of a test set.
std::string sequences_hash(std::span<const TimestampSequence> samples);

/// Runs one estimator over the set; failed estimates (non-finite) count
/// as failures and score as 0 ns.
MetricReport evaluate_estimator(const std::string& name,
                                const LifetimeEstimator& estimator,
                                std::span<const TimestampSequence> samples,
                                unsigned threads = 1);

/// A trained network that takes part in a table, by display name.
struct NamedWeights {
  std::string name;
  RnnWeights weights;
};

struct TableConfig {
  DatasetConfig test_data;  // the background range is set per noise level
  std::vector<double> noise_levels{0.0};
  std::vector<std::string> estimators{"lsfit", "cmm"};
  std::vector<NamedWeights> networks;
  unsigned threads = 1;

  /// Noise-free test set of 1024-photon sequences.
  static TableConfig table1(std::size_t samples = 10000);
  /// 1% and 5% background with CMM*, the background-subtracted CMM.
  static TableConfig table2(std::size_t samples = 10000);
};

/// Evaluates every estimator and network on one shared test set per noise
/// level. All rows for a level are checked to have consumed identical
/// sequences.
std::vector<MetricReport> run_table(const TableConfig& config);

/// Header: estimator,noise,samples,failures,rmse,mae,mape,rmse_literal,dataset_hash
std::string metrics_to_csv(const std::vector<MetricReport>& rows);

/// Fixed-width table for people.
std::string metrics_summary(const std::vector<MetricReport>& rows);

}  // namespace flim

#endif  // FLIM_BENCHMARK_HPP
