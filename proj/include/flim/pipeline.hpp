// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The flimrnn Authors

#ifndef FLIM_PIPELINE_HPP
#define FLIM_PIPELINE_HPP

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "flim/quant.hpp"
#include "flim/sim.hpp"

namespace flim {

inline constexpr std::size_t kSensorRows = 32;
inline constexpr std::size_t kSensorCols = 32;
inline constexpr std::size_t kPixelCount = kSensorRows * kSensorCols;
inline constexpr std::size_t kUnitCount = 4;
inline constexpr std::size_t kPixelsPerUnit = kPixelCount / kUnitCount;
inline constexpr std::uint32_t kTdcBinPs = 50;

/// One detected photon. Times are integer picoseconds so that streams are
/// exact on disk and across platforms.
struct PhotonEvent {
  std::uint32_t pixel = 0;         // row * 32 + col
  std::uint64_t wall_time_ps = 0;  // global clock
  std::uint32_t timestamp_ps = 0;  // within the repetition period

  double wall_time_ns() const { return static_cast<double>(wall_time_ps) * 1e-3; }
  double timestamp_ns() const { return static_cast<double>(timestamp_ps) * 1e-3; }
  bool operator==(const PhotonEvent&) const = default;
};

/// Unit in charge of a pixel: each unit owns eight consecutive rows.
inline std::size_t unit_of_pixel(std::uint32_t pixel) { return pixel / kPixelsPerUnit; }

struct ComputeUnit {
  std::size_t id = 0;
  std::uint32_t first_pixel = 0;
  std::uint32_t end_pixel = 0;  // exclusive
  std::uint64_t busy_until_ps = 0;
  std::vector<QuantState> states;       // end_pixel - first_pixel entries
  std::vector<std::uint32_t> photons;   // accepted this frame, per pixel
  std::uint64_t offered = 0;
  std::uint64_t processed = 0;
  std::uint64_t dropped = 0;
};

/// Lifetime image of one frame. Pixels with fewer than the configured
/// minimum of photons hold -1.
struct LifetimeFrame {
  std::size_t index = 0;
  std::uint64_t start_ps = 0;
  std::uint64_t end_ps = 0;
  std::vector<double> lifetime;         // kPixelCount, ns
  std::vector<std::int64_t> raw;        // head output codes
  std::vector<std::uint32_t> photons;   // kPixelCount

  bool valid(std::size_t pixel) const { return lifetime[pixel] >= 0.0; }
};

struct UnitStats {
  std::uint64_t offered = 0;
  std::uint64_t processed = 0;
  std::uint64_t dropped = 0;
};

struct PipelineStats {
  std::array<UnitStats, kUnitCount> units{};
  std::uint64_t offered = 0;
  std::uint64_t processed = 0;
  std::uint64_t dropped = 0;
  std::size_t frames = 0;
  double duration_ns = 0.0;
  double processed_rate = 0.0;  // photons / s
  double offered_rate = 0.0;    // photons / s
  double drop_fraction = 0.0;
  double frame_rate = 0.0;      // frames / s

  std::string to_text() const;
};

struct PipelineConfig {
  double frame_period_ns = 1e8;  // 10 frames per second
  double core_latency_ns = 1000.0;
  std::uint32_t min_photons = 16;
  /// Simulated span; 0 ends with the frame holding the last event.
  double duration_ns = 0.0;

  void validate() const;
};

struct PipelineResult {
  std::vector<LifetimeFrame> frames;
  PipelineStats stats;
};

/// Event-driven simulation of the compute units. An event is dropped when
/// its unit is still busy with an earlier photon; otherwise the pixel's
/// state is advanced by one quantized GRU step and the unit stays busy for
/// core_latency. At each frame boundary the head runs for every pixel and
/// all states reset. Throws ContractViolation on unsorted events.
PipelineResult run_pipeline(std::span<const PhotonEvent> events,
                            const QuantizedWeights& qw,
                            const PipelineConfig& config);

/// Per-pixel decay models and photon rates (photons / s).
struct Scene {
  std::vector<DecayModel> models;  // kPixelCount
  std::vector<double> rates;       // kPixelCount

  void validate() const;
};

/// Every pixel with the same model and rate.
Scene uniform_scene(const DecayModel& model, double rate);

struct BeadSceneOptions {
  double lifetime = 5.5;
  double radius = 6.0;  // pixels
  double center_row = 15.5;
  double center_col = 15.5;
  double rate = 1.0e4;       // inside the bead
  double dark_rate = 0.0;    // outside, pure background
  double irf_peak = 2.0;
};

/// A fluorescent disk on a dark field.
Scene bead_scene(const BeadSceneOptions& opts = {});

/// Independent Poisson arrivals per pixel over [0, duration), timestamps
/// drawn from each pixel's model and floored to the 50 ps TDC grid, merged
/// in wall-time order (ties by pixel).
std::vector<PhotonEvent> synthesize_sensor_stream(const Scene& scene,
                                                  double duration_ns,
                                                  std::uint64_t seed);

/// Saturated serializer output: events leave at a fixed total rate and are
/// dealt to the units in turn, each to a uniformly chosen pixel of that
/// unit. Only pixels of `scene` with a positive rate are chosen.
std::vector<PhotonEvent> synthesize_serialized_stream(const Scene& scene,
                                                      double total_rate,
                                                      double duration_ns,
                                                      std::uint64_t seed);

/// Frame as CSV: row, col, photons, lifetime_ns.
std::string frame_to_csv(const LifetimeFrame& frame);

}  // namespace flim

#endif  // FLIM_PIPELINE_HPP
