// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The flimrnn Authors

#ifndef FLIM_RNN_HPP
#define FLIM_RNN_HPP

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "flim/sim.hpp"

namespace flim {

enum class Variant { kSimple, kGru, kLstm };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);

/// Number of stacked gate blocks: simple 1, GRU 3 (z, r, n), LSTM 4
/// (i, f, g, o).
std::size_t gate_count(Variant v);

struct RnnConfig {
  Variant variant = Variant::kGru;
  std::size_t hidden = 16;
  std::size_t head_hidden = 16;
  /// Timestamps are divided by this before entering the cell (ns).
  /// Dividing by the 50 ns period squeezes the informative first few ns
  /// into a sliver of the input range and trains markedly worse.
  double input_scale = 10.0;
  /// The head's linear output is multiplied by this to give ns.
  double output_scale = 10.0;

  void validate() const;
  bool operator==(const RnnConfig&) const = default;
};

/// Parameters of one single-layer recurrent cell plus its two-layer head.
///
/// Cell tensors stack the gate blocks along rows, in the order given by
/// gate_count(). Input size is 1, so w_ih is a column of gates*hidden
/// entries; w_hh is (gates*hidden) x hidden, row-major. One bias per gate.
///
///   simple: h' = tanh(Wx + Uh + b)
///   GRU:    z = sig(.), r = sig(.), n = tanh(W_n x + U_n (r*h) + b_n)
///           h' = (1 - z) * n + z * h
///   LSTM:   i, f, o = sig(.), g = tanh(.), c' = f*c + i*g, h' = o*tanh(c')
///
/// Head: a = sig(W1 h + b1), y = w2 . a + b2, estimate = y * output_scale.
struct RnnWeights {
  RnnConfig config;
  std::vector<double> w_ih;
  std::vector<double> w_hh;
  std::vector<double> b;
  std::vector<double> head_w1;  // head_hidden x hidden
  std::vector<double> head_b1;  // head_hidden
  std::vector<double> head_w2;  // head_hidden
  std::vector<double> head_b2;  // 1

  std::uint64_t train_seed = 0;
  std::string dataset_hash;

  static constexpr std::size_t kTensorCount = 7;
  static constexpr std::array<std::string_view, kTensorCount> kTensorNames = {
      "w_ih", "w_hh", "b", "head_w1", "head_b1", "head_w2", "head_b2"};

  /// Zero-filled parameters shaped for `config`.
  static RnnWeights zeros(const RnnConfig& config);

  std::array<std::span<double>, kTensorCount> tensors();
  std::array<std::span<const double>, kTensorCount> tensors() const;
  std::size_t parameter_count() const;

  /// Throws ContractViolation on shape mismatch or non-finite values.
  void validate() const;

  bool operator==(const RnnWeights&) const = default;
};

struct HiddenState {
  std::vector<double> h;
  std::vector<double> c;  // LSTM only
  std::size_t count = 0;
};

HiddenState init_state(const RnnConfig& config);

/// One recurrent update with a timestamp in ns.
HiddenState cell_step(const HiddenState& state, double timestamp,
                      const RnnWeights& weights);

/// In-place variant used by the streaming paths.
void cell_step_inplace(HiddenState& state, double timestamp,
                       const RnnWeights& weights);

/// Lifetime estimate in ns from the current hidden state.
double head_predict(const HiddenState& state, const RnnWeights& weights);

struct Emission {
  std::size_t photon_index = 0;  // 1-based count of photons consumed
  double estimate = 0.0;
};

/// Feeds timestamps in arrival order, emitting every `emit_every` photons
/// and once at the end. The last emission is the sample's estimate.
std::vector<Emission> stream_estimate(std::span<const double> timestamps,
                                      const RnnWeights& weights,
                                      std::size_t emit_every);

/// Final estimate only.
double final_estimate(std::span<const double> timestamps,
                      const RnnWeights& weights);

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace flim

#endif  // FLIM_RNN_HPP
