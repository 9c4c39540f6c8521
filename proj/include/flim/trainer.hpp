// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The flimrnn Authors

#ifndef FLIM_TRAINER_HPP
#define FLIM_TRAINER_HPP

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flim/rnn.hpp"
#include "flim/sim.hpp"

namespace flim {

/// Sigmoid-shaped per-timestep loss weights
///   w_i = 1 / (1 + exp(-(i - N/4) / (N/4))),  i = 1..N
/// normalized to sum to 1 when `normalize` is set.
std::vector<double> loss_weights(std::size_t n_timesteps, bool normalize = true);

/// sum_i w_i ((y - yhat_i) / y)^2.
double weighted_mspe(std::span<const double> predictions, double truth,
                     std::span<const double> weights);

/// Orthogonal recurrent blocks, Xavier-uniform input and head matrices,
/// zero biases except the LSTM forget gate (ones).
RnnWeights init_weights(const RnnConfig& config, std::uint64_t seed);

/// Per-timestep predictions (ns) for every prefix of `timestamps`.
std::vector<double> predict_all_steps(std::span<const double> timestamps,
                                      const RnnWeights& weights);

struct GradientResult {
  RnnWeights grad;  // same shape as the weights
  double loss = 0.0;
};

/// Exact gradient of the batch-averaged weighted MSPE by backpropagation
/// through time. `truncation` > 0 limits each backward pass to that many
/// steps after every loss term; 0 means full unrolling. `step_weights`
/// overrides loss_weights(len) when non-empty. Throws TrainingError on
/// non-finite forward values.
GradientResult bptt_gradients(const RnnWeights& weights,
                              std::span<const TimestampSequence> batch,
                              std::span<const double> step_weights = {},
                              std::size_t truncation = 0,
                              unsigned threads = 1);

/// Same for explicit (timestamps, truth) pairs.
GradientResult bptt_gradients(const RnnWeights& weights,
                              std::span<const std::vector<double>> sequences,
                              std::span<const double> truths,
                              std::span<const double> step_weights = {},
                              std::size_t truncation = 0,
                              unsigned threads = 1);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected Adam over all tensors of an RnnWeights.
class Adam {
 public:
  Adam(const RnnWeights& shape, AdamConfig config);
  void step(RnnWeights& params, const RnnWeights& grad, double lr);
  std::size_t steps() const { return t_; }

 private:
  AdamConfig cfg_;
  RnnWeights m_;
  RnnWeights v_;
  std::size_t t_ = 0;
};

struct TrainConfig {
  RnnConfig model{};
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double decay = 0.9;
  std::size_t decay_every = 5;
  AdamConfig adam{};
  double clip_norm = 0.0;  // 0 = no clipping
  std::size_t truncation = 0;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  /// Cap on eval samples scored per epoch; 0 = whole eval split.
  std::size_t eval_limit = 0;
  bool verbose = false;
  /// Start from these weights instead of a fresh initialization. Their
  /// config must equal `model`.
  std::optional<RnnWeights> initial;

  void validate() const;
  /// Learning rate in effect during 0-based epoch `epoch`.
  double lr_at(std::size_t epoch) const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double learning_rate = 0.0;
  double train_loss = 0.0;
  double eval_loss = 0.0;
  double eval_mape = 0.0;
  double wall_seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  bool diverged = false;
  std::string message;
  AdamConfig adam{};

  /// CSV without wall-clock columns (stable across runs) unless requested.
  std::string to_csv(bool include_timing = false) const;
};

struct TrainResult {
  RnnWeights weights;
  TrainHistory history;
};

/// Trains on dataset.train(), scores dataset.eval() after every epoch and
/// returns the weights with the lowest eval loss.
TrainResult train(const TrainConfig& config, const Dataset& dataset);

/// Mean weighted MSPE and final-step MAPE over a set of sequences.
struct EvalScore {
  double loss = 0.0;
  double mape = 0.0;
};
EvalScore evaluate(const RnnWeights& weights,
                   std::span<const TimestampSequence> samples,
                   unsigned threads = 1);

}  // namespace flim

#endif  // FLIM_TRAINER_HPP
