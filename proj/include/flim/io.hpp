// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The flimrnn Authors

#ifndef FLIM_IO_HPP
#define FLIM_IO_HPP

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "flim/pipeline.hpp"
#include "flim/quant.hpp"
#include "flim/rnn.hpp"
#include "flim/sim.hpp"

namespace flim {

namespace fs = std::filesystem;

/// Whole-file helpers. Writes go to a temporary sibling that is renamed
/// into place, so a failed write leaves no partial file. IoError names the
/// path.
std::string read_file(const fs::path& path);
void write_file(const fs::path& path, std::string_view bytes);

// Dataset container, little-endian:
//   16-byte header: "FLIMDSET", u32 version, u32 reserved
//   u64 config length, config text
//   u64 sample count
//   per sample: u32 n_lifetimes, f64 lifetimes, u32 n_intensities,
//     f64 intensities, f64 t0, f64 fwhm, f64 period, u64 seed,
//     u32 photon count, f64 timestamps
//   32-byte SHA-256 of everything before it
std::string serialize_dataset(const Dataset& data);
Dataset deserialize_dataset(std::string_view bytes);
void save_dataset(const fs::path& path, const Dataset& data);
Dataset load_dataset(const fs::path& path);
/// Hex SHA-256 stored in the trailer of the serialized dataset.
std::string dataset_hash(const Dataset& data);
/// One row per photon: sample_id,timestamp_ns.
std::string dataset_to_csv(const Dataset& data);

/// Float weights as a JSON document with a SHA-256 content hash over the
/// document without its hash field. Doubles are written in shortest
/// round-trip form, so reading back is bit-exact.
std::string weights_to_text(const RnnWeights& w);
RnnWeights weights_from_text(const std::string& text);
std::string weights_hash(const RnnWeights& w);
void save_weights(const fs::path& path, const RnnWeights& w);
RnnWeights load_weights(const fs::path& path);

// Quantized weights, little-endian:
//   16-byte header: "FLIMQWTS", u32 version, u32 reserved
//   i32 variant, hidden, head_hidden, accumulator_bits; f64 input_scale,
//   output_scale; formats (act, input) as 4 x i32 each; u32 hash length +
//   float-weights hash
//   per tensor: format 4 x i32, f64 max_error, u64 saturated, u64 count,
//   i32 values
//   f64 saturation fraction, 32-byte SHA-256 trailer
std::string serialize_quantized(const QuantizedWeights& q);
QuantizedWeights deserialize_quantized(std::string_view bytes);
/// Writes the binary and `<path>.manifest.json`.
void save_quantized(const fs::path& path, const QuantizedWeights& q,
                    const QuantizeOptions& opts);
QuantizedWeights load_quantized(const fs::path& path);
std::string quantized_manifest(const QuantizedWeights& q, const QuantizeOptions& opts,
                               const std::string& file_hash);

// Event stream: 16-byte header "FLIMEVTS", u32 version, u32 reserved;
// u64 count; records of u32 pixel, u64 wall time ps, u32 timestamp ps.
std::string serialize_events(std::span<const PhotonEvent> events);
std::vector<PhotonEvent> deserialize_events(std::string_view bytes);
void save_events(const fs::path& path, std::span<const PhotonEvent> events);
std::vector<PhotonEvent> load_events(const fs::path& path);

/// Reference input sequence and the integer state it must produce.
struct GoldenVector {
  std::vector<std::int64_t> inputs;  // raw input codes
  std::vector<std::int64_t> state;   // final hidden state codes
  std::int64_t head = 0;             // head output code
};

/// Line-oriented text: "golden 1", "weights <hash>", then per vector
/// "inputs n ...", "state H ...", "head v".
std::string golden_to_text(const std::vector<GoldenVector>& vectors,
                           const std::string& quantized_hash);
std::vector<GoldenVector> golden_from_text(const std::string& text,
                                           std::string* quantized_hash = nullptr);

/// Computes golden vectors by running the quantized cell.
std::vector<GoldenVector> make_golden(const QuantizedWeights& q,
                                      std::span<const std::vector<std::int64_t>> inputs);

}  // namespace flim

#endif  // FLIM_IO_HPP
