// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The flimrnn Authors

#include "flim/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "flim/error.hpp"
#include "flim/rng.hpp"

namespace flim {

void PipelineConfig::validate() const {
  if (!(frame_period_ns > 0.0) || !std::isfinite(frame_period_ns)) {
    throw ConfigError("pipeline: frame period must be > 0");
  }
  if (!(core_latency_ns >= 0.0) || !std::isfinite(core_latency_ns)) {
    throw ConfigError("pipeline: core latency must be >= 0");
  }
  if (!(duration_ns >= 0.0) || !std::isfinite(duration_ns)) {
    throw ConfigError("pipeline: duration must be >= 0");
  }
}

std::string PipelineStats::to_text() const {
  std::ostringstream os;
  os.precision(10);
  for (std::size_t u = 0; u < units.size(); ++u) {
    os << "unit " << u << " offered " << units[u].offered << " processed "
       << units[u].processed << " dropped " << units[u].dropped << '\n';
  }
  os << "offered " << offered << "\nprocessed " << processed << "\ndropped "
     << dropped << "\nframes " << frames << "\nduration_ns " << duration_ns
     << "\noffered_rate_per_s " << offered_rate << "\nprocessed_rate_per_s "
     << processed_rate << "\ndrop_fraction " << drop_fraction
     << "\nframe_rate_hz " << frame_rate << '\n';
  return os.str();
}

namespace {

std::uint64_t to_ps(double ns) {
  return static_cast<std::uint64_t>(std::llround(ns * 1000.0));
}

}  // namespace

PipelineResult run_pipeline(std::span<const PhotonEvent> events,
                            const QuantizedWeights& qw,
                            const PipelineConfig& config) {
  config.validate();
  const std::uint64_t frame_ps = std::max<std::uint64_t>(to_ps(config.frame_period_ns), 1);
  const std::uint64_t latency_ps = to_ps(config.core_latency_ns);
  for (std::size_t i = 0; i < events.size(); ++i) {
    if (events[i].pixel >= kPixelCount) {
      throw ContractViolation("run_pipeline: pixel id out of range at event " +
                              std::to_string(i));
    }
    if (i > 0 && events[i].wall_time_ps < events[i - 1].wall_time_ps) {
      throw ContractViolation("run_pipeline: events not sorted by wall time at event " +
                              std::to_string(i));
    }
  }

  const QuantizedGru gru(qw);
  const QuantState zero = init_quant_state(qw);
  std::array<ComputeUnit, kUnitCount> units;
  for (std::size_t u = 0; u < kUnitCount; ++u) {
    units[u].id = u;
    units[u].first_pixel = static_cast<std::uint32_t>(u * kPixelsPerUnit);
    units[u].end_pixel = static_cast<std::uint32_t>((u + 1) * kPixelsPerUnit);
    units[u].states.assign(kPixelsPerUnit, zero);
    units[u].photons.assign(kPixelsPerUnit, 0);
  }

  std::uint64_t end_ps = to_ps(config.duration_ns);
  if (end_ps == 0) {
    end_ps = events.empty() ? 0 : (events.back().wall_time_ps / frame_ps + 1) * frame_ps;
  }
  const std::size_t n_frames =
      static_cast<std::size_t>((end_ps + frame_ps - 1) / frame_ps);

  PipelineResult result;
  result.frames.reserve(n_frames);
  auto close_frame = [&](std::size_t index) {
    LifetimeFrame f;
    f.index = index;
    f.start_ps = index * frame_ps;
    f.end_ps = std::min<std::uint64_t>((index + 1) * frame_ps, end_ps);
    f.lifetime.assign(kPixelCount, -1.0);
    f.raw.assign(kPixelCount, 0);
    f.photons.assign(kPixelCount, 0);
    for (auto& unit : units) {
      for (std::size_t k = 0; k < kPixelsPerUnit; ++k) {
        const std::size_t p = unit.first_pixel + k;
        f.photons[p] = unit.photons[k];
        f.raw[p] = gru.head_raw(unit.states[k]);
        if (unit.photons[k] >= config.min_photons && unit.photons[k] > 0) {
          f.lifetime[p] = std::max(
              0.0, dequantize(f.raw[p], qw.act_fmt) * qw.config.output_scale);
        }
        unit.states[k] = zero;
        unit.photons[k] = 0;
      }
    }
    result.frames.push_back(std::move(f));
  };

  std::size_t frame = 0;
  for (const PhotonEvent& e : events) {
    if (e.wall_time_ps >= end_ps) break;
    while (e.wall_time_ps >= (frame + 1) * frame_ps) close_frame(frame++);
    ComputeUnit& unit = units[unit_of_pixel(e.pixel)];
    ++unit.offered;
    if (e.wall_time_ps < unit.busy_until_ps) {
      ++unit.dropped;
      continue;
    }
    const std::size_t k = e.pixel - unit.first_pixel;
    gru.step(unit.states[k], quantize_input(e.timestamp_ns(), qw));
    ++unit.photons[k];
    ++unit.processed;
    unit.busy_until_ps = e.wall_time_ps + latency_ps;
  }
  while (frame < n_frames) close_frame(frame++);

  PipelineStats& st = result.stats;
  for (std::size_t u = 0; u < kUnitCount; ++u) {
    st.units[u] = {units[u].offered, units[u].processed, units[u].dropped};
    st.offered += units[u].offered;
    st.processed += units[u].processed;
    st.dropped += units[u].dropped;
  }
  st.frames = result.frames.size();
  st.duration_ns = static_cast<double>(end_ps) * 1e-3;
  if (end_ps > 0) {
    const double seconds = static_cast<double>(end_ps) * 1e-12;
    st.processed_rate = static_cast<double>(st.processed) / seconds;
    st.offered_rate = static_cast<double>(st.offered) / seconds;
    st.frame_rate = static_cast<double>(st.frames) / seconds;
  }
  st.drop_fraction =
      st.offered ? static_cast<double>(st.dropped) / static_cast<double>(st.offered) : 0.0;
  return result;
}

void Scene::validate() const {
  if (models.size() != kPixelCount || rates.size() != kPixelCount) {
    throw ContractViolation("scene: need one model and one rate per pixel");
  }
  for (std::size_t p = 0; p < kPixelCount; ++p) {
    if (!(rates[p] >= 0.0) || !std::isfinite(rates[p])) {
      throw DomainError("scene: rates must be finite and >= 0");
    }
    if (rates[p] > 0.0) models[p].validate();
  }
}

Scene uniform_scene(const DecayModel& model, double rate) {
  Scene s;
  s.models.assign(kPixelCount, model);
  s.rates.assign(kPixelCount, rate);
  return s;
}

Scene bead_scene(const BeadSceneOptions& opts) {
  Scene s;
  s.models.resize(kPixelCount);
  s.rates.assign(kPixelCount, 0.0);
  const DecayModel bead = DecayModel::mono(opts.lifetime, opts.irf_peak, 0.1673, 50.0);
  // Background-only pixels still need a valid lifetime entry.
  const DecayModel dark = DecayModel::mono(1.0, opts.irf_peak, 0.1673, 50.0, 1.0);
  for (std::size_t r = 0; r < kSensorRows; ++r) {
    for (std::size_t c = 0; c < kSensorCols; ++c) {
      const std::size_t p = r * kSensorCols + c;
      const double dr = static_cast<double>(r) - opts.center_row;
      const double dc = static_cast<double>(c) - opts.center_col;
      if (dr * dr + dc * dc <= opts.radius * opts.radius) {
        s.models[p] = bead;
        s.rates[p] = opts.rate;
      } else {
        s.models[p] = dark;
        s.rates[p] = opts.dark_rate;
      }
    }
  }
  return s;
}

namespace {

std::uint32_t tdc_code(double t_ns, double period) {
  const auto bins = static_cast<std::uint64_t>(std::floor(t_ns * 1000.0 / kTdcBinPs));
  const auto max_bin =
      static_cast<std::uint64_t>(std::ceil(period * 1000.0 / kTdcBinPs)) - 1;
  return static_cast<std::uint32_t>(std::min(bins, max_bin) * kTdcBinPs);
}

void sort_events(std::vector<PhotonEvent>& ev) {
  std::sort(ev.begin(), ev.end(), [](const PhotonEvent& a, const PhotonEvent& b) {
    if (a.wall_time_ps != b.wall_time_ps) return a.wall_time_ps < b.wall_time_ps;
    if (a.pixel != b.pixel) return a.pixel < b.pixel;
    return a.timestamp_ps < b.timestamp_ps;
  });
}

}  // namespace

std::vector<PhotonEvent> synthesize_sensor_stream(const Scene& scene,
                                                  double duration_ns,
                                                  std::uint64_t seed) {
  scene.validate();
  if (!(duration_ns >= 0.0)) throw DomainError("synthesize_sensor_stream: duration < 0");
  std::vector<PhotonEvent> out;
  for (std::uint32_t p = 0; p < kPixelCount; ++p) {
    const double rate = scene.rates[p];
    if (rate <= 0.0) continue;
    Rng rng(derive_seed(seed, "pixel", p));
    const double mean_gap_ns = 1e9 / rate;
    double t = 0.0;
    for (;;) {
      t += rng.exponential(mean_gap_ns);
      if (t >= duration_ns) break;
      const double ts = sample_timestamp(scene.models[p], rng);
      out.push_back({p, to_ps(t), tdc_code(ts, scene.models[p].repetition_period)});
    }
  }
  sort_events(out);
  return out;
}

std::vector<PhotonEvent> synthesize_serialized_stream(const Scene& scene,
                                                      double total_rate,
                                                      double duration_ns,
                                                      std::uint64_t seed) {
  scene.validate();
  if (!(total_rate > 0.0)) throw DomainError("synthesize_serialized_stream: rate must be > 0");
  std::array<std::vector<std::uint32_t>, kUnitCount> lit;
  for (std::uint32_t p = 0; p < kPixelCount; ++p) {
    if (scene.rates[p] > 0.0) lit[unit_of_pixel(p)].push_back(p);
  }
  std::vector<std::size_t> active;
  for (std::size_t u = 0; u < kUnitCount; ++u) {
    if (!lit[u].empty()) active.push_back(u);
  }
  std::vector<PhotonEvent> out;
  if (active.empty()) return out;
  Rng rng(derive_seed(seed, "serializer"));
  const double gap_ns = 1e9 / total_rate;
  for (std::uint64_t k = 0;; ++k) {
    const double t = static_cast<double>(k) * gap_ns;
    if (t >= duration_ns) break;
    const auto& pixels = lit[active[k % active.size()]];
    const std::uint32_t p = pixels[rng.below(pixels.size())];
    const double ts = sample_timestamp(scene.models[p], rng);
    out.push_back({p, to_ps(t), tdc_code(ts, scene.models[p].repetition_period)});
  }
  return out;
}

std::string frame_to_csv(const LifetimeFrame& frame) {
  std::ostringstream os;
  os.precision(17);
  os << "row,col,photons,lifetime_ns\n";
  for (std::size_t p = 0; p < kPixelCount; ++p) {
    os << p / kSensorCols << ',' << p % kSensorCols << ',' << frame.photons[p] << ','
       << frame.lifetime[p] << '\n';
  }
  return os.str();
}

}  // namespace flim
