// Copyright 2026 The pastssm Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "pastssm/error.hpp"
#include "pastssm/events.hpp"

namespace pastssm {

enum class AggregationMode { EventCounts, TimeWindows };
enum class FrameKind { Gray, Rgb };

inline std::string to_string(AggregationMode m) {
  return m == AggregationMode::EventCounts ? "event-counts" : "time-windows";
}
inline AggregationMode aggregation_mode_from(std::string_view s) {
  if (s == "event-counts") return AggregationMode::EventCounts;
  if (s == "time-windows") return AggregationMode::TimeWindows;
  throw ArgumentError("unknown aggregation mode '" + std::string(s) + "'");
}
inline std::string to_string(FrameKind k) { return k == FrameKind::Rgb ? "rgb" : "gray"; }
inline FrameKind frame_kind_from(std::string_view s) {
  if (s == "rgb") return FrameKind::Rgb;
  if (s == "gray") return FrameKind::Gray;
  throw ArgumentError("unknown frame representation '" + std::string(s) + "'");
}

struct SamplingConfig {
  double frequency_hz = 50.0;
  std::size_t group_size = 1000;  // events per group, event-count mode
  double window_us = 0.0;         // time-window length; 0 means one tick period
  AggregationMode mode = AggregationMode::EventCounts;
  std::size_t height = 32;
  std::size_t width = 32;
  FrameKind representation = FrameKind::Rgb;

  double period_us() const { return 1e6 / frequency_hz; }
  double effective_window_us() const { return window_us > 0 ? window_us : period_us(); }

  void validate() const {
    if (!(frequency_hz > 0) || !std::isfinite(frequency_hz)) {
      throw ArgumentError("sampling frequency must be positive");
    }
    if (mode == AggregationMode::EventCounts && group_size == 0) {
      throw ArgumentError("group size must be positive in event-count mode");
    }
    if (mode == AggregationMode::TimeWindows && window_us < 0) {
      throw ArgumentError("time window must be positive");
    }
    if (height == 0 || width == 0) throw ArgumentError("frame dimensions must be positive");
  }
};

/// Reference sampling settings per dataset: (name, frequency in Hz, events per
/// frame on a 346x260 sensor).
struct SamplingPreset {
  std::string_view dataset;
  double frequency_hz;
  std::size_t events_per_frame;
};
inline constexpr std::array<SamplingPreset, 7> kSamplingPresets = {{
    {"N-Caltech101", 200.0, 50'000},
    {"DVS-Action", 80.0, 100'000},
    {"SeAct", 80.0, 80'000},
    {"HARDVS", 100.0, 80'000},
    {"ArDVS100", 50.0, 80'000},
    {"Real-ArDVS10", 50.0, 80'000},
    {"TemArDVS100", 50.0, 80'000},
}};

/// Rescales a per-frame event count from a 346x260 sensor to `geometry`.
inline std::size_t scaled_group_size(std::size_t events_per_frame, SensorGeometry geometry) {
  const double ratio = static_cast<double>(geometry.width) * geometry.height / (346.0 * 260.0);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(events_per_frame * ratio)));
}

/// Number of ticks ceil(T f) for a span of `duration_us`, at least one.
inline std::size_t tick_count(std::int64_t duration_us, double frequency_hz) {
  const double x = static_cast<double>(duration_us) * frequency_hz / 1e6;
  const double p = std::ceil(x - 1e-9 * std::max(1.0, x));
  return std::max<std::size_t>(1, static_cast<std::size_t>(p));
}

/// Sampling instants spaced 1/f apart starting at the stream origin.
inline std::vector<double> sample_ticks(const EventStream& stream, double frequency_hz) {
  if (!(frequency_hz > 0)) throw ArgumentError("sampling frequency must be positive");
  std::vector<double> ticks;
  if (stream.empty()) return ticks;
  const std::size_t p = tick_count(stream.duration_us, frequency_hz);
  const double period = 1e6 / frequency_hz;
  ticks.reserve(p);
  for (std::size_t i = 0; i < p; ++i) {
    ticks.push_back(static_cast<double>(stream.start_us) + static_cast<double>(i) * period);
  }
  return ticks;
}

using EventGroup = std::vector<Event>;

namespace detail {

inline auto content_key(const Event& e) { return std::tuple(e.x, e.y, e.polarity); }

/// The `g` events nearest `tick`. Equal-timestamp runs are taken whole when
/// they fit; a run that straddles the budget contributes its smallest events
/// by (x, y, p), so the result does not depend on order within a run.
inline EventGroup nearest_group(std::span<const Event> ev, double tick, std::size_t g) {
  const std::size_t n = ev.size();
  if (g >= n) return EventGroup(ev.begin(), ev.end());
  const auto it = std::lower_bound(ev.begin(), ev.end(), tick,
                                    [](const Event& e, double t) { return e.t_us < t; });
  std::size_t right = static_cast<std::size_t>(it - ev.begin());  // next candidate on the right
  std::size_t left = right;                                      // [left, right) taken
  std::size_t remaining = g;
  std::vector<std::size_t> partial;
  while (remaining > 0) {
    const bool has_left = left > 0;
    const bool has_right = right < n;
    bool take_left;
    if (has_left && has_right) {
      const double dl = tick - static_cast<double>(ev[left - 1].t_us);
      const double dr = static_cast<double>(ev[right].t_us) - tick;
      take_left = dl <= dr;
    } else {
      take_left = has_left;
    }
    std::size_t lo, hi;
    if (take_left) {
      hi = left;
      lo = hi - 1;
      while (lo > 0 && ev[lo - 1].t_us == ev[hi - 1].t_us) --lo;
    } else {
      lo = right;
      hi = lo + 1;
      while (hi < n && ev[hi].t_us == ev[lo].t_us) ++hi;
    }
    const std::size_t run = hi - lo;
    if (run <= remaining) {
      remaining -= run;
      if (take_left) left = lo; else right = hi;
      continue;
    }
    partial.resize(run);
    for (std::size_t i = 0; i < run; ++i) partial[i] = lo + i;
    std::stable_sort(partial.begin(), partial.end(), [&](std::size_t a, std::size_t b) {
      return content_key(ev[a]) < content_key(ev[b]);
    });
    partial.resize(remaining);
    std::sort(partial.begin(), partial.end());
    remaining = 0;
    if (take_left) {
      EventGroup out;
      out.reserve(g);
      for (std::size_t i : partial) out.push_back(ev[i]);
      out.insert(out.end(), ev.begin() + left, ev.begin() + right);
      return out;
    }
    EventGroup out(ev.begin() + left, ev.begin() + right);
    for (std::size_t i : partial) out.push_back(ev[i]);
    return out;
  }
  return EventGroup(ev.begin() + left, ev.begin() + right);
}

}  // namespace detail

/// One event group per tick: the `group_size` events nearest the middle of
/// [tick, tick + 1/f) in event-count mode, or every event in
/// [tick, tick + window) in time-window mode.
inline std::vector<EventGroup> group_events(const EventStream& stream,
                                            std::span<const double> ticks,
                                            const SamplingConfig& config) {
  config.validate();
  std::vector<EventGroup> groups;
  groups.reserve(ticks.size());
  const std::span<const Event> ev(stream.events);
  for (std::size_t i = 0; i < ticks.size(); ++i) {
    const double tick = ticks[i];
    if (config.mode == AggregationMode::EventCounts) {
      groups.push_back(detail::nearest_group(ev, tick + 0.5 * config.period_us(), config.group_size));
    } else {
      const double end = tick + config.effective_window_us();
      const auto first = std::lower_bound(ev.begin(), ev.end(), tick,
                                          [](const Event& e, double t) { return e.t_us < t; });
      auto last = std::lower_bound(first, ev.end(), end,
                                   [](const Event& e, double t) { return e.t_us < t; });
      // The final window is closed at the stream end so an event stamped
      // exactly at the end is not lost when T f is an integer.
      if (i + 1 == ticks.size() && static_cast<double>(stream.end_us()) <= end) {
        last = std::upper_bound(first, ev.end(), stream.end_us(),
                                [](std::int64_t t, const Event& e) { return t < e.t_us; });
      }
      groups.emplace_back(first, last);
    }
  }
  return groups;
}

/// Accumulates a group into an H x W x 3 frame (row-major, channel last).
/// Rgb puts positive counts in channel 0 and negative counts in channel 2;
/// Gray repeats the total count in all channels. Values are divided by the
/// frame's largest count unless `normalize` is false.
inline std::vector<float> aggregate_frame(std::span<const Event> group, SensorGeometry geometry,
                                          std::size_t height, std::size_t width,
                                          FrameKind representation, bool normalize = true) {
  if (geometry.width == 0 || geometry.height == 0) throw GeometryError("empty sensor geometry");
  std::vector<float> frame(height * width * 3, 0.0f);
  float peak = 0.0f;
  for (const Event& e : group) {
    if (e.x >= geometry.width || e.y >= geometry.height) {
      throw BoundsError("event outside sensor geometry");
    }
    const std::size_t col = static_cast<std::size_t>(e.x) * width / geometry.width;
    const std::size_t row = static_cast<std::size_t>(e.y) * height / geometry.height;
    float* px = &frame[(row * width + col) * 3];
    if (representation == FrameKind::Rgb) {
      float& c = e.polarity > 0 ? px[0] : px[2];
      c += 1.0f;
      peak = std::max(peak, c);
    } else {
      px[0] += 1.0f;
      px[1] = px[0];
      px[2] = px[0];
      peak = std::max(peak, px[0]);
    }
  }
  if (normalize && peak > 0.0f) {
    for (float& v : frame) v /= peak;
  }
  return frame;
}

/// Frames for one sample, padded with all-zero frames to a common length.
struct EventFrameStack {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> frames;  // total() x height x width x 3
  std::size_t original_count = 0;
  std::size_t pad_count = 0;
  std::vector<double> tick_times;

  std::size_t total() const noexcept { return original_count + pad_count; }
  std::size_t frame_size() const noexcept { return height * width * 3; }
  std::span<const float> frame(std::size_t i) const {
    return std::span<const float>(frames).subspan(i * frame_size(), frame_size());
  }
};

/// Appends zero frames until the stack holds `pad_to` frames.
inline void pad_stack(EventFrameStack& stack, std::size_t pad_to) {
  if (pad_to < stack.total()) {
    throw CapacityError("pad target " + std::to_string(pad_to) + " below " +
                        std::to_string(stack.total()) + " frames");
  }
  const double period = stack.tick_times.size() >= 2
                            ? stack.tick_times[1] - stack.tick_times[0]
                            : 0.0;
  while (stack.total() < pad_to) {
    const double last = stack.tick_times.empty() ? 0.0 : stack.tick_times.back();
    stack.tick_times.push_back(last + period);
    ++stack.pad_count;
  }
  stack.frames.resize(stack.total() * stack.frame_size(), 0.0f);
}

/// Samples, groups and aggregates `stream`; `pad_to == 0` means no padding.
inline EventFrameStack build_stack(const EventStream& stream, const SamplingConfig& config,
                                   std::size_t pad_to = 0, bool normalize = true) {
  config.validate();
  const std::vector<double> ticks = sample_ticks(stream, config.frequency_hz);
  if (pad_to != 0 && pad_to < ticks.size()) {
    throw CapacityError("stream yields " + std::to_string(ticks.size()) +
                        " frames but pad target is " + std::to_string(pad_to));
  }
  const std::vector<EventGroup> groups = group_events(stream, ticks, config);
  EventFrameStack stack;
  stack.height = config.height;
  stack.width = config.width;
  stack.original_count = groups.size();
  stack.tick_times = ticks;
  stack.frames.reserve(std::max(pad_to, groups.size()) * stack.frame_size());
  for (const EventGroup& g : groups) {
    const std::vector<float> f = aggregate_frame(g, stream.geometry, config.height,
                                                 config.width, config.representation, normalize);
    stack.frames.insert(stack.frames.end(), f.begin(), f.end());
  }
  if (pad_to > 0) pad_stack(stack, pad_to);
  return stack;
}

/// Writes `<prefix>.f32` (little-endian float32, P x H x W x 3) and a JSON
/// sidecar `<prefix>.json` describing it.
inline void dump_stack(const std::filesystem::path& prefix, const EventFrameStack& stack,
                       const SamplingConfig& config) {
  std::filesystem::path raw = prefix;
  raw += ".f32";
  std::filesystem::path meta = prefix;
  meta += ".json";
  {
    std::ofstream out(raw, std::ios::binary);
    if (!out) throw IoError("cannot write " + raw.string());
    for (float v : stack.frames) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  nlohmann::json j;
  j["data"] = raw.filename().string();
  j["dtype"] = "float32-le";
  j["shape"] = {stack.total(), stack.height, stack.width, 3};
  j["original_count"] = stack.original_count;
  j["pad_count"] = stack.pad_count;
  j["tick_times_us"] = stack.tick_times;
  j["frequency_hz"] = config.frequency_hz;
  j["mode"] = to_string(config.mode);
  j["group_size"] = config.group_size;
  j["representation"] = to_string(config.representation);
  std::ofstream out(meta);
  if (!out) throw IoError("cannot write " + meta.string());
  out << j.dump(2) << '\n';
}

/// Reads a stack written by dump_stack.
inline EventFrameStack read_stack(const std::filesystem::path& prefix) {
  std::filesystem::path meta = prefix;
  meta += ".json";
  std::ifstream in(meta);
  if (!in) throw IoError("cannot open " + meta.string());
  const nlohmann::json j = nlohmann::json::parse(in);
  EventFrameStack s;
  const auto shape = j.at("shape").get<std::vector<std::size_t>>();
  if (shape.size() != 4 || shape[3] != 3) throw FormatError("bad stack shape", 0);
  s.height = shape[1];
  s.width = shape[2];
  s.original_count = j.at("original_count").get<std::size_t>();
  s.pad_count = j.at("pad_count").get<std::size_t>();
  s.tick_times = j.at("tick_times_us").get<std::vector<double>>();
  std::filesystem::path raw = prefix;
  raw += ".f32";
  std::ifstream data(raw, std::ios::binary);
  if (!data) throw IoError("cannot open " + raw.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(data)),
                                   std::istreambuf_iterator<char>());
  const std::size_t n = shape[0] * shape[1] * shape[2] * 3;
  if (bytes.size() != n * 4) throw FormatError("stack payload size mismatch", bytes.size());
  s.frames.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    s.frames[i] = std::bit_cast<float>(detail::get_le<std::uint32_t>(bytes.data() + 4 * i));
  }
  return s;
}

}  // namespace pastssm
