// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The flimrnn Authors

#ifndef FLIM_QUANT_HPP
#define FLIM_QUANT_HPP

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "flim/rnn.hpp"

namespace flim {

enum class Rounding { kTruncate, kHalfUp, kConvergent };
enum class Overflow { kSaturate, kWrap };

std::string_view rounding_name(Rounding r);
Rounding parse_rounding(std::string_view name);

/// Signed two's-complement fixed point: value = raw * 2^-frac_bits.
struct FixedPointFormat {
  int total_bits = 16;
  int frac_bits = 15;
  Rounding rounding = Rounding::kConvergent;
  Overflow overflow = Overflow::kSaturate;

  void validate() const;
  std::int64_t max_raw() const { return (std::int64_t{1} << (total_bits - 1)) - 1; }
  std::int64_t min_raw() const { return -(std::int64_t{1} << (total_bits - 1)); }
  double ulp() const;
  bool operator==(const FixedPointFormat&) const = default;
};

/// Counts of saturating (or wrapping) conversions.
struct QuantStats {
  std::uint64_t conversions = 0;
  std::uint64_t overflows = 0;
};

std::int64_t quantize_value(double x, const FixedPointFormat& fmt,
                            QuantStats* stats = nullptr);
double dequantize(std::int64_t raw, const FixedPointFormat& fmt);

/// Rounds value * 2^-shift to an integer with the given mode (shift >= 0).
__int128 round_shift(__int128 value, int shift, Rounding mode);

/// Applies the overflow mode of `fmt` to a raw integer.
std::int64_t fit_to_format(__int128 raw, const FixedPointFormat& fmt,
                           QuantStats* stats = nullptr);

enum class ActivationKind { kSigmoid, kTanh };

/// Piecewise-linear activation on the non-negative half-axis, mirrored by
/// symmetry: tanh(-x) = -tanh(x), sigmoid(-x) = 1 - sigmoid(x). Breakpoints
/// are uniform on [0, x_max] and interpolation is a chord between exact
/// breakpoint values, so the approximant is continuous and monotone.
/// Inputs beyond x_max clamp to the last breakpoint.
struct ActivationTable {
  ActivationKind kind = ActivationKind::kSigmoid;
  int segments = 32;
  int log2_segments_per_unit = 2;  // breakpoint spacing 2^-k
  std::vector<std::int64_t> values;  // segments + 1 entries, output format
  FixedPointFormat fmt;              // input and output format

  static ActivationTable build(ActivationKind kind, const FixedPointFormat& fmt,
                               int segments = 32);
  double x_max() const;
  /// Input raw value in fmt (any magnitude), output raw value in fmt.
  std::int64_t eval(std::int64_t x) const;
};

std::int64_t approx_activation(std::int64_t x, const ActivationTable& table);

struct QTensor {
  FixedPointFormat fmt;
  std::vector<std::int64_t> data;
  double max_error = 0.0;
  std::uint64_t saturated = 0;
  bool operator==(const QTensor&) const = default;
};

struct QuantizeOptions {
  int weight_bits = 16;
  int activation_bits = 16;
  Rounding rounding = Rounding::kConvergent;
  Overflow overflow = Overflow::kSaturate;
  /// Largest timestamp fed to the cell (ns); sizes the input format.
  double input_range = 50.0;
  /// Weight fraction bits; negative = per-tensor auto ranging.
  int weight_frac_bits = -1;
};

/// Fixed-point GRU with its head. All tensors follow RnnWeights' layout.
struct QuantizedWeights {
  RnnConfig config;
  FixedPointFormat act_fmt;    // hidden state, gates, head activations, output
  FixedPointFormat input_fmt;  // normalized timestamp
  int accumulator_bits = 40;
  QTensor w_ih, w_hh, b, head_w1, head_b1, head_w2, head_b2;
  std::string float_hash;  // content hash of the source float weights
  double saturation_fraction = 0.0;
  std::vector<std::string> warnings;

  ActivationTable sigmoid_table() const;
  ActivationTable tanh_table() const;
  std::array<const QTensor*, RnnWeights::kTensorCount> tensors() const;
  std::array<QTensor*, RnnWeights::kTensorCount> tensors();
};

/// Quantizes every parameter of a GRU. Throws ConfigError for other
/// variants. A saturation fraction above 1% adds a warning.
QuantizedWeights quantize_model(const RnnWeights& weights,
                                const QuantizeOptions& opts);

struct QuantState {
  std::vector<std::int64_t> h;  // raw, act_fmt
  std::size_t count = 0;
  bool operator==(const QuantState&) const = default;
};

QuantState init_quant_state(const QuantizedWeights& qw);

/// Raw input code of a timestamp (ns).
std::int64_t quantize_input(double timestamp, const QuantizedWeights& qw);

/// One GRU update. Every dot product accumulates exactly in wide integers
/// and is rounded once into the activation format.
void quantized_gru_step(QuantState& state, std::int64_t input_raw,
                        const QuantizedWeights& qw, QuantStats* stats = nullptr);
void quantized_gru_step(QuantState& state, double timestamp,
                        const QuantizedWeights& qw, QuantStats* stats = nullptr);

/// Head output as a raw act_fmt integer (lifetime / output_scale).
std::int64_t quantized_head_raw(const QuantState& state,
                                const QuantizedWeights& qw,
                                QuantStats* stats = nullptr);
double quantized_head_predict(const QuantState& state,
                              const QuantizedWeights& qw);

/// Quantized cell with its activation tables built once; the free
/// functions above rebuild them per call.
class QuantizedGru {
 public:
  explicit QuantizedGru(const QuantizedWeights& qw);

  const QuantizedWeights& weights() const { return *qw_; }
  void step(QuantState& state, std::int64_t input_raw,
            QuantStats* stats = nullptr) const;
  std::int64_t head_raw(const QuantState& state, QuantStats* stats = nullptr) const;
  double head_predict(const QuantState& state) const;

 private:
  void preact(std::size_t row0, std::size_t rows, std::int64_t x,
              std::span<const std::int64_t> v, std::int64_t* out,
              QuantStats* stats) const;
  __int128 saturate_acc(__int128 acc, QuantStats* stats) const;

  const QuantizedWeights* qw_;
  ActivationTable sig_;
  ActivationTable tanh_;
  __int128 acc_max_;
};

/// Final lifetime estimate (ns) after all timestamps.
double quantized_stream_estimate(std::span<const double> timestamps,
                                 const QuantizedWeights& qw);

}  // namespace flim

#endif  // FLIM_QUANT_HPP
