// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The flimrnn Authors

#include "flim/quant.hpp"

#include <algorithm>
#include <cmath>

#include "flim/error.hpp"

namespace flim {

std::string_view rounding_name(Rounding r) {
  switch (r) {
    case Rounding::kTruncate: return "truncate";
    case Rounding::kHalfUp: return "half-up";
    case Rounding::kConvergent: return "convergent";
  }
  return "unknown";
}

Rounding parse_rounding(std::string_view name) {
  if (name == "truncate" || name == "trn") return Rounding::kTruncate;
  if (name == "half-up" || name == "round-half-up" || name == "rnd") {
    return Rounding::kHalfUp;
  }
  if (name == "convergent" || name == "conv") return Rounding::kConvergent;
  throw ConfigError("unknown rounding mode '" + std::string(name) + "'");
}

void FixedPointFormat::validate() const {
  if (total_bits < 2 || total_bits > 32) {
    throw ConfigError("fixed point: total bits must be in [2, 32]");
  }
  if (frac_bits < 0 || frac_bits >= total_bits) {
    throw ConfigError("fixed point: need 0 <= frac bits < total bits");
  }
}

double FixedPointFormat::ulp() const { return std::ldexp(1.0, -frac_bits); }

std::int64_t fit_to_format(__int128 raw, const FixedPointFormat& fmt,
                           QuantStats* stats) {
  if (stats) ++stats->conversions;
  const __int128 hi = fmt.max_raw();
  const __int128 lo = fmt.min_raw();
  if (raw <= hi && raw >= lo) return static_cast<std::int64_t>(raw);
  if (stats) ++stats->overflows;
  if (fmt.overflow == Overflow::kSaturate) {
    return static_cast<std::int64_t>(raw > hi ? hi : lo);
  }
  // Keep the low total_bits bits and sign-extend.
  const unsigned __int128 mask =
      (static_cast<unsigned __int128>(1) << fmt.total_bits) - 1;
  unsigned __int128 bits = static_cast<unsigned __int128>(raw) & mask;
  const unsigned __int128 sign = static_cast<unsigned __int128>(1)
                                 << (fmt.total_bits - 1);
  __int128 v = static_cast<__int128>(bits);
  if (bits & sign) v -= static_cast<__int128>(mask) + 1;
  return static_cast<std::int64_t>(v);
}

__int128 round_shift(__int128 value, int shift, Rounding mode) {
  if (shift <= 0) return value << (-shift);
  const __int128 one = 1;
  switch (mode) {
    case Rounding::kTruncate:
      return value >> shift;  // arithmetic: toward -inf
    case Rounding::kHalfUp:
      return (value + (one << (shift - 1))) >> shift;
    case Rounding::kConvergent: {
      __int128 q = value >> shift;
      const __int128 rem = value - (q << shift);
      const __int128 half = one << (shift - 1);
      if (rem > half || (rem == half && (q & 1) != 0)) ++q;
      return q;
    }
  }
  return value >> shift;
}

std::int64_t quantize_value(double x, const FixedPointFormat& fmt,
                            QuantStats* stats) {
  if (!std::isfinite(x)) throw DomainError("quantize_value: non-finite input");
  const double s = std::ldexp(x, fmt.frac_bits);
  double q = 0.0;
  switch (fmt.rounding) {
    case Rounding::kTruncate:
      q = std::floor(s);
      break;
    case Rounding::kHalfUp:
      q = std::floor(s + 0.5);
      break;
    case Rounding::kConvergent: {
      const double f = std::floor(s);
      const double d = s - f;
      q = f;
      if (d > 0.5 || (d == 0.5 && std::fmod(f, 2.0) != 0.0)) q = f + 1.0;
      break;
    }
  }
  constexpr double kLimit = 0x1.0p62;
  q = std::clamp(q, -kLimit, kLimit);
  return fit_to_format(static_cast<__int128>(q), fmt, stats);
}

double dequantize(std::int64_t raw, const FixedPointFormat& fmt) {
  return std::ldexp(static_cast<double>(raw), -fmt.frac_bits);
}

// ---------------------------------------------------------------------------
// Activation tables

ActivationTable ActivationTable::build(ActivationKind kind,
                                       const FixedPointFormat& fmt,
                                       int segments) {
  fmt.validate();
  if (segments < 2 || (segments & (segments - 1)) != 0) {
    throw ConfigError("activation table: segment count must be a power of two");
  }
  ActivationTable t;
  t.kind = kind;
  t.segments = segments;
  // sigmoid on [0, 8], tanh on [0, 4]
  const int log2_range = kind == ActivationKind::kSigmoid ? 3 : 2;
  const int log2_segments = static_cast<int>(std::log2(segments));
  t.log2_segments_per_unit = log2_segments - log2_range;
  if (t.log2_segments_per_unit > fmt.frac_bits) {
    throw ConfigError("activation table: format too coarse for the breakpoints");
  }
  t.fmt = fmt;
  t.values.resize(static_cast<std::size_t>(segments) + 1);
  const double step = std::ldexp(1.0, -t.log2_segments_per_unit);
  for (int i = 0; i <= segments; ++i) {
    const double x = i * step;
    const double y = kind == ActivationKind::kSigmoid ? sigmoid(x) : std::tanh(x);
    t.values[static_cast<std::size_t>(i)] = quantize_value(y, fmt);
  }
  return t;
}

double ActivationTable::x_max() const {
  return std::ldexp(static_cast<double>(segments), -log2_segments_per_unit);
}

std::int64_t ActivationTable::eval(std::int64_t x) const {
  const bool negative = x < 0;
  const __int128 mag = negative ? -static_cast<__int128>(x) : x;
  const int shift = fmt.frac_bits - log2_segments_per_unit;
  const __int128 idx = mag >> shift;
  std::int64_t y;
  if (idx >= segments) {
    y = values.back();
  } else {
    const auto i = static_cast<std::size_t>(idx);
    const __int128 r = mag - (idx << shift);
    const __int128 dv = values[i + 1] - values[i];
    y = static_cast<std::int64_t>(values[i] +
                                  round_shift(dv * r, shift, fmt.rounding));
  }
  if (!negative) return y;
  if (kind == ActivationKind::kTanh) return -y;
  return (std::int64_t{1} << fmt.frac_bits) - y;
}

std::int64_t approx_activation(std::int64_t x, const ActivationTable& table) {
  return table.eval(x);
}

// ---------------------------------------------------------------------------
// Model quantization

ActivationTable QuantizedWeights::sigmoid_table() const {
  return ActivationTable::build(ActivationKind::kSigmoid, act_fmt);
}

ActivationTable QuantizedWeights::tanh_table() const {
  return ActivationTable::build(ActivationKind::kTanh, act_fmt);
}

std::array<const QTensor*, RnnWeights::kTensorCount> QuantizedWeights::tensors()
    const {
  return {&w_ih, &w_hh, &b, &head_w1, &head_b1, &head_w2, &head_b2};
}

std::array<QTensor*, RnnWeights::kTensorCount> QuantizedWeights::tensors() {
  return {&w_ih, &w_hh, &b, &head_w1, &head_b1, &head_w2, &head_b2};
}

namespace {

int integer_bits_for(double max_abs) {
  if (!(max_abs > 0.0)) return 0;
  // Smallest k >= 0 with max_abs < 2^k.
  int k = std::max(0, static_cast<int>(std::floor(std::log2(max_abs))) + 1);
  return k;
}

QTensor quantize_tensor(std::span<const double> values, int bits, int frac,
                        const QuantizeOptions& opts) {
  QTensor q;
  double max_abs = 0.0;
  for (double v : values) max_abs = std::max(max_abs, std::abs(v));
  if (frac < 0) frac = std::max(0, bits - 1 - integer_bits_for(max_abs));
  q.fmt = {bits, frac, opts.rounding, opts.overflow};
  q.fmt.validate();
  q.data.reserve(values.size());
  for (double v : values) {
    QuantStats st;
    const std::int64_t raw = quantize_value(v, q.fmt, &st);
    q.saturated += st.overflows;
    q.max_error = std::max(q.max_error, std::abs(dequantize(raw, q.fmt) - v));
    q.data.push_back(raw);
  }
  return q;
}

}  // namespace

QuantizedWeights quantize_model(const RnnWeights& weights,
                                const QuantizeOptions& opts) {
  if (weights.config.variant != Variant::kGru) {
    throw ConfigError("quantize_model: only GRU models are supported");
  }
  weights.validate();
  QuantizedWeights q;
  q.config = weights.config;
  q.act_fmt = {opts.activation_bits, opts.activation_bits - 1, opts.rounding,
               opts.overflow};
  q.act_fmt.validate();
  const int in_int = integer_bits_for(opts.input_range / weights.config.input_scale);
  q.input_fmt = {opts.activation_bits,
                 std::max(0, opts.activation_bits - 1 - in_int), opts.rounding,
                 opts.overflow};
  q.input_fmt.validate();
  q.accumulator_bits = std::max(40, opts.weight_bits + opts.activation_bits + 8);

  const auto src = weights.tensors();
  auto dst = q.tensors();
  std::uint64_t saturated = 0;
  std::size_t total = 0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    *dst[i] = quantize_tensor(src[i], opts.weight_bits, opts.weight_frac_bits, opts);
    saturated += dst[i]->saturated;
    total += src[i].size();
  }
  q.saturation_fraction =
      total ? static_cast<double>(saturated) / static_cast<double>(total) : 0.0;
  if (q.saturation_fraction > 0.01) {
    q.warnings.push_back("more than 1% of weights saturated");
  }
  return q;
}

QuantState init_quant_state(const QuantizedWeights& qw) {
  QuantState s;
  s.h.assign(qw.config.hidden, 0);
  return s;
}

std::int64_t quantize_input(double timestamp, const QuantizedWeights& qw) {
  return quantize_value(timestamp / qw.config.input_scale, qw.input_fmt);
}

QuantizedGru::QuantizedGru(const QuantizedWeights& qw)
    : qw_(&qw), sig_(qw.sigmoid_table()), tanh_(qw.tanh_table()),
      acc_max_((static_cast<__int128>(1) << (qw.accumulator_bits - 1)) - 1) {}

__int128 QuantizedGru::saturate_acc(__int128 acc, QuantStats* stats) const {
  if (acc > acc_max_) {
    if (stats) ++stats->overflows;
    return acc_max_;
  }
  if (acc < -acc_max_ - 1) {
    if (stats) ++stats->overflows;
    return -acc_max_ - 1;
  }
  return acc;
}

namespace {

std::int64_t clamp_code(__int128 v) {
  return static_cast<std::int64_t>(
      std::clamp<__int128>(v, -(__int128{1} << 62), __int128{1} << 62));
}

}  // namespace

// Pre-activation of `rows` consecutive rows starting at row0:
// b + w_ih * x + w_hh * v, accumulated at a common fraction and rounded
// once to act_fmt resolution.
void QuantizedGru::preact(std::size_t row0, std::size_t rows, std::int64_t x,
                          std::span<const std::int64_t> v, std::int64_t* out,
                          QuantStats* stats) const {
  const QuantizedWeights& qw = *qw_;
  const std::size_t H = qw.config.hidden;
  const int fa = qw.act_fmt.frac_bits;
  const int f_in = qw.w_ih.fmt.frac_bits + qw.input_fmt.frac_bits;
  const int f_hh = qw.w_hh.fmt.frac_bits + fa;
  const int f_b = qw.b.fmt.frac_bits;
  const int F = std::max({f_in, f_hh, f_b});
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t row = row0 + r;
    __int128 dot = 0;
    const std::int64_t* u = qw.w_hh.data.data() + row * H;
    for (std::size_t j = 0; j < H; ++j) dot += static_cast<__int128>(u[j]) * v[j];
    __int128 acc = (static_cast<__int128>(qw.b.data[row]) << (F - f_b)) +
                   ((static_cast<__int128>(qw.w_ih.data[row]) * x) << (F - f_in)) +
                   (dot << (F - f_hh));
    acc = saturate_acc(acc, stats);
    out[r] = clamp_code(round_shift(acc, F - fa, qw.act_fmt.rounding));
  }
}

void QuantizedGru::step(QuantState& state, std::int64_t x,
                        QuantStats* stats) const {
  const QuantizedWeights& qw = *qw_;
  const std::size_t H = qw.config.hidden;
  if (state.h.size() != H) {
    throw ContractViolation("quantized_gru_step: state size does not match weights");
  }
  const int fa = qw.act_fmt.frac_bits;
  const Rounding rnd = qw.act_fmt.rounding;
  std::int64_t zr[2 * 64];
  std::int64_t rh[64];
  std::int64_t n[64];
  preact(0, 2 * H, x, state.h, zr, stats);
  for (std::size_t j = 0; j < 2 * H; ++j) zr[j] = sig_.eval(zr[j]);
  for (std::size_t j = 0; j < H; ++j) {
    rh[j] = fit_to_format(
        round_shift(static_cast<__int128>(zr[H + j]) * state.h[j], fa, rnd),
        qw.act_fmt, stats);
  }
  preact(2 * H, H, x, std::span<const std::int64_t>(rh, H), n, stats);
  const __int128 one = __int128{1} << fa;
  for (std::size_t j = 0; j < H; ++j) {
    const std::int64_t cand = tanh_.eval(n[j]);
    const __int128 z = zr[j];
    const __int128 mix = (one - z) * cand + z * state.h[j];
    state.h[j] = fit_to_format(round_shift(mix, fa, rnd), qw.act_fmt, stats);
  }
  ++state.count;
}

std::int64_t QuantizedGru::head_raw(const QuantState& state,
                                    QuantStats* stats) const {
  const QuantizedWeights& qw = *qw_;
  const std::size_t H = qw.config.hidden;
  const std::size_t K = qw.config.head_hidden;
  if (state.h.size() != H) {
    throw ContractViolation("quantized head: state size does not match weights");
  }
  const int fa = qw.act_fmt.frac_bits;
  const Rounding rnd = qw.act_fmt.rounding;
  const int f1 = qw.head_w1.fmt.frac_bits + fa;
  const int fb1 = qw.head_b1.fmt.frac_bits;
  const int F1 = std::max(f1, fb1);
  const int f2 = qw.head_w2.fmt.frac_bits + fa;
  const int fb2 = qw.head_b2.fmt.frac_bits;
  const int F2 = std::max(f2, fb2);
  __int128 y = static_cast<__int128>(qw.head_b2.data[0]) << (F2 - fb2);
  for (std::size_t k = 0; k < K; ++k) {
    __int128 dot = 0;
    const std::int64_t* row = qw.head_w1.data.data() + k * H;
    for (std::size_t j = 0; j < H; ++j) dot += static_cast<__int128>(row[j]) * state.h[j];
    __int128 acc = (static_cast<__int128>(qw.head_b1.data[k]) << (F1 - fb1)) +
                   (dot << (F1 - f1));
    acc = saturate_acc(acc, stats);
    const std::int64_t a = sig_.eval(clamp_code(round_shift(acc, F1 - fa, rnd)));
    y += (static_cast<__int128>(qw.head_w2.data[k]) * a) << (F2 - f2);
  }
  y = saturate_acc(y, stats);
  return fit_to_format(round_shift(y, F2 - fa, rnd), qw.act_fmt, stats);
}

double QuantizedGru::head_predict(const QuantState& state) const {
  return dequantize(head_raw(state), qw_->act_fmt) * qw_->config.output_scale;
}

void quantized_gru_step(QuantState& state, std::int64_t input_raw,
                        const QuantizedWeights& qw, QuantStats* stats) {
  QuantizedGru(qw).step(state, input_raw, stats);
}

void quantized_gru_step(QuantState& state, double timestamp,
                        const QuantizedWeights& qw, QuantStats* stats) {
  quantized_gru_step(state, quantize_input(timestamp, qw), qw, stats);
}

std::int64_t quantized_head_raw(const QuantState& state,
                                const QuantizedWeights& qw, QuantStats* stats) {
  return QuantizedGru(qw).head_raw(state, stats);
}

double quantized_head_predict(const QuantState& state,
                              const QuantizedWeights& qw) {
  return QuantizedGru(qw).head_predict(state);
}

double quantized_stream_estimate(std::span<const double> timestamps,
                                 const QuantizedWeights& qw) {
  if (timestamps.empty()) throw DomainError("quantized_stream_estimate: empty sequence");
  const QuantizedGru gru(qw);
  QuantState s = init_quant_state(qw);
  for (double t : timestamps) gru.step(s, quantize_input(t, qw));
  return gru.head_predict(s);
}

}  // namespace flim
