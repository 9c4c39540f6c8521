// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The flimrnn Authors

#include "flim/rnn.hpp"

#include <algorithm>
#include <cmath>

#include "flim/error.hpp"

namespace flim {

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::kSimple: return "simple";
    case Variant::kGru: return "gru";
    case Variant::kLstm: return "lstm";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  if (name == "simple" || name == "rnn") return Variant::kSimple;
  if (name == "gru") return Variant::kGru;
  if (name == "lstm") return Variant::kLstm;
  throw ConfigError("unknown variant '" + std::string(name) + "'");
}

std::size_t gate_count(Variant v) {
  switch (v) {
    case Variant::kSimple: return 1;
    case Variant::kGru: return 3;
    case Variant::kLstm: return 4;
  }
  return 0;
}

void RnnConfig::validate() const {
  if (hidden != 8 && hidden != 16 && hidden != 32 && hidden != 64 &&
      hidden != 4) {
    // 4 is accepted for gradient checks; deployable sizes are 8..64.
    throw ConfigError("hidden size must be one of 4, 8, 16, 32, 64");
  }
  if (head_hidden == 0) throw ConfigError("head hidden width must be > 0");
  if (!(input_scale > 0.0) || !(output_scale > 0.0)) {
    throw ConfigError("normalization constants must be > 0");
  }
}

RnnWeights RnnWeights::zeros(const RnnConfig& config) {
  config.validate();
  const std::size_t gh = gate_count(config.variant) * config.hidden;
  RnnWeights w;
  w.config = config;
  w.w_ih.assign(gh, 0.0);
  w.w_hh.assign(gh * config.hidden, 0.0);
  w.b.assign(gh, 0.0);
  w.head_w1.assign(config.head_hidden * config.hidden, 0.0);
  w.head_b1.assign(config.head_hidden, 0.0);
  w.head_w2.assign(config.head_hidden, 0.0);
  w.head_b2.assign(1, 0.0);
  return w;
}

std::array<std::span<double>, RnnWeights::kTensorCount> RnnWeights::tensors() {
  return {w_ih, w_hh, b, head_w1, head_b1, head_w2, head_b2};
}

std::array<std::span<const double>, RnnWeights::kTensorCount>
RnnWeights::tensors() const {
  return {w_ih, w_hh, b, head_w1, head_b1, head_w2, head_b2};
}

std::size_t RnnWeights::parameter_count() const {
  std::size_t n = 0;
  for (auto t : tensors()) n += t.size();
  return n;
}

void RnnWeights::validate() const {
  config.validate();
  const RnnWeights shape = zeros(config);
  const auto expect = shape.tensors();
  const auto have = tensors();
  for (std::size_t i = 0; i < kTensorCount; ++i) {
    if (expect[i].size() != have[i].size()) {
      throw ContractViolation("weights: tensor " +
                              std::string(kTensorNames[i]) +
                              " has wrong size");
    }
    for (double v : have[i]) {
      if (!std::isfinite(v)) {
        throw ContractViolation("weights: non-finite value in " +
                                std::string(kTensorNames[i]));
      }
    }
  }
}

HiddenState init_state(const RnnConfig& config) {
  HiddenState s;
  s.h.assign(config.hidden, 0.0);
  if (config.variant == Variant::kLstm) s.c.assign(config.hidden, 0.0);
  return s;
}

namespace {

// out[r] = bias[r] + w_ih[r] * x + sum_j w_hh[r, j] * h[j] for rows
// [row0, row0 + rows).
void affine_rows(const RnnWeights& w, std::size_t row0, std::size_t rows,
                 double x, std::span<const double> h, double* out) {
  const std::size_t H = w.config.hidden;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t row = row0 + r;
    const double* u = w.w_hh.data() + row * H;
    double acc = w.b[row] + w.w_ih[row] * x;
    for (std::size_t j = 0; j < H; ++j) acc += u[j] * h[j];
    out[r] = acc;
  }
}

}  // namespace

void cell_step_inplace(HiddenState& state, double timestamp,
                       const RnnWeights& w) {
  const std::size_t H = w.config.hidden;
  if (state.h.size() != H ||
      (w.config.variant == Variant::kLstm && state.c.size() != H)) {
    throw ContractViolation("cell_step: state size does not match weights");
  }
  const double x = timestamp / w.config.input_scale;
  switch (w.config.variant) {
    case Variant::kSimple: {
      std::vector<double> pre(H);
      affine_rows(w, 0, H, x, state.h, pre.data());
      for (std::size_t j = 0; j < H; ++j) state.h[j] = std::tanh(pre[j]);
      break;
    }
    case Variant::kGru: {
      std::vector<double> zr(2 * H);
      affine_rows(w, 0, 2 * H, x, state.h, zr.data());
      std::vector<double> rh(H);
      for (std::size_t j = 0; j < H; ++j) {
        zr[j] = sigmoid(zr[j]);
        zr[H + j] = sigmoid(zr[H + j]);
        rh[j] = zr[H + j] * state.h[j];
      }
      std::vector<double> n(H);
      affine_rows(w, 2 * H, H, x, rh, n.data());
      for (std::size_t j = 0; j < H; ++j) {
        const double cand = std::tanh(n[j]);
        const double z = zr[j];
        state.h[j] = (1.0 - z) * cand + z * state.h[j];
      }
      break;
    }
    case Variant::kLstm: {
      std::vector<double> g(4 * H);
      affine_rows(w, 0, 4 * H, x, state.h, g.data());
      for (std::size_t j = 0; j < H; ++j) {
        const double i = sigmoid(g[j]);
        const double f = sigmoid(g[H + j]);
        const double cand = std::tanh(g[2 * H + j]);
        const double o = sigmoid(g[3 * H + j]);
        state.c[j] = f * state.c[j] + i * cand;
        state.h[j] = o * std::tanh(state.c[j]);
      }
      break;
    }
  }
  ++state.count;
}

HiddenState cell_step(const HiddenState& state, double timestamp,
                      const RnnWeights& weights) {
  HiddenState next = state;
  cell_step_inplace(next, timestamp, weights);
  return next;
}

double head_predict(const HiddenState& state, const RnnWeights& w) {
  const std::size_t H = w.config.hidden;
  const std::size_t K = w.config.head_hidden;
  if (state.h.size() != H) {
    throw ContractViolation("head_predict: state size does not match weights");
  }
  double y = w.head_b2[0];
  for (std::size_t k = 0; k < K; ++k) {
    const double* row = w.head_w1.data() + k * H;
    double acc = w.head_b1[k];
    for (std::size_t j = 0; j < H; ++j) acc += row[j] * state.h[j];
    y += w.head_w2[k] * sigmoid(acc);
  }
  return y * w.config.output_scale;
}

std::vector<Emission> stream_estimate(std::span<const double> timestamps,
                                      const RnnWeights& weights,
                                      std::size_t emit_every) {
  if (timestamps.empty()) throw DomainError("stream_estimate: empty sequence");
  if (emit_every == 0) emit_every = timestamps.size();
  HiddenState state = init_state(weights.config);
  std::vector<Emission> out;
  for (std::size_t i = 0; i < timestamps.size(); ++i) {
    cell_step_inplace(state, timestamps[i], weights);
    const bool last = i + 1 == timestamps.size();
    if ((i + 1) % emit_every == 0 || last) {
      out.push_back({i + 1, head_predict(state, weights)});
    }
  }
  return out;
}

double final_estimate(std::span<const double> timestamps,
                      const RnnWeights& weights) {
  return stream_estimate(timestamps, weights, timestamps.size()).back().estimate;
}

}  // namespace flim
