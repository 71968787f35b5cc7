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
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pastssm/error.hpp"
#include "pastssm/numeric.hpp"

namespace pastssm {

struct SensorGeometry {
  std::uint32_t width = 0;
  std::uint32_t height = 0;

  friend bool operator==(const SensorGeometry&, const SensorGeometry&) = default;
};

struct Event {
  std::int64_t t_us = 0;
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::int8_t polarity = 1;  // +1 or -1

  friend bool operator==(const Event&, const Event&) = default;
};

/// Time-ordered events from one sensor. `start_us` anchors the stream on the
/// time axis; for loaded streams it is the first timestamp, for generated
/// ones it is the declared origin.
struct EventStream {
  std::vector<Event> events;
  SensorGeometry geometry;
  std::int64_t start_us = 0;
  std::int64_t duration_us = 0;

  std::size_t count() const noexcept { return events.size(); }
  bool empty() const noexcept { return events.empty(); }
  std::int64_t end_us() const noexcept { return start_us + duration_us; }

  /// Throws if any stream invariant is violated.
  void validate() const {
    for (std::size_t i = 0; i < events.size(); ++i) {
      const Event& e = events[i];
      if (e.polarity != 1 && e.polarity != -1) {
        throw FormatError("polarity must be +1 or -1", i);
      }
      if (e.x >= geometry.width || e.y >= geometry.height) {
        throw BoundsError("event " + std::to_string(i) + " outside " +
                          std::to_string(geometry.width) + "x" +
                          std::to_string(geometry.height) + " sensor");
      }
      if (e.t_us < 0) throw OrderError("negative timestamp", i + 1);
      if (i > 0 && e.t_us < events[i - 1].t_us) {
        throw OrderError("timestamps decrease", i + 1);
      }
    }
    if (duration_us < 0) throw ArgumentError("negative duration");
  }

  friend bool operator==(const EventStream&, const EventStream&) = default;
};

/// Builds a stream whose time span is exactly covered by its events.
inline EventStream make_stream(std::vector<Event> events, SensorGeometry geometry) {
  EventStream s;
  s.geometry = geometry;
  if (!events.empty()) {
    s.start_us = events.front().t_us;
    s.duration_us = events.back().t_us - events.front().t_us;
  }
  s.events = std::move(events);
  s.validate();
  return s;
}

namespace detail {

inline std::int8_t normalize_polarity(long long p, std::size_t where) {
  if (p == 1) return 1;
  if (p == 0 || p == -1) return -1;
  throw FormatError("polarity must be one of -1, 0, 1", where);
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

template <typename Int>
Int parse_int(std::string_view field, std::size_t line) {
  field = trim(field);
  Int v{};
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc{} || ptr != field.data() + field.size() || field.empty()) {
    throw FormatError("bad integer field '" + std::string(field) + "'", line);
  }
  return v;
}

template <typename U>
void put_le(std::ostream& out, U v) {
  std::array<char, sizeof(U)> buf{};
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    buf[i] = static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFFu);
  }
  out.write(buf.data(), buf.size());
}

template <typename U>
U get_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= std::uint64_t{p[i]} << (8 * i);
  return static_cast<U>(v);
}

inline constexpr std::array<char, 4> kBinaryMagic = {'E', 'V', 'T', '1'};
inline constexpr std::size_t kBinaryHeader = 4 + 4 + 4 + 8;
inline constexpr std::size_t kBinaryRecord = 8 + 2 + 2 + 1;

inline void check_order_and_bounds(const std::vector<Event>& events, const Event& e,
                                   SensorGeometry g, std::size_t record) {
  if (e.x >= g.width || e.y >= g.height) {
    throw BoundsError("record " + std::to_string(record) + ": (" + std::to_string(e.x) +
                      "," + std::to_string(e.y) + ") outside " + std::to_string(g.width) +
                      "x" + std::to_string(g.height) + " sensor");
  }
  if (!events.empty() && e.t_us < events.back().t_us) {
    throw OrderError("timestamp " + std::to_string(e.t_us) + " after " +
                         std::to_string(events.back().t_us),
                     record);
  }
}

}  // namespace detail

/// Parses the CSV event format (header `t_us,x,y,p`).
inline EventStream parse_events_csv(std::istream& in, SensorGeometry geometry) {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw FormatError("missing CSV header", 1);
  ++line_no;
  if (detail::trim(line) != "t_us,x,y,p") {
    throw FormatError("expected header 't_us,x,y,p'", line_no);
  }
  std::vector<Event> events;
  std::size_t record = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view row = detail::trim(line);
    if (row.empty()) continue;
    std::array<std::string_view, 4> f;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < 4; ++i) {
      const std::size_t comma = row.find(',', pos);
      if ((i < 3) == (comma == std::string_view::npos)) {
        throw FormatError("expected 4 comma-separated fields", line_no);
      }
      f[i] = row.substr(pos, i < 3 ? comma - pos : std::string_view::npos);
      pos = comma + 1;
    }
    ++record;
    Event e;
    e.t_us = static_cast<std::int64_t>(detail::parse_int<std::uint64_t>(f[0], line_no));
    const auto x = detail::parse_int<std::uint32_t>(f[1], line_no);
    const auto y = detail::parse_int<std::uint32_t>(f[2], line_no);
    if (x > 0xFFFF || y > 0xFFFF) throw BoundsError("coordinate exceeds 16 bits");
    e.x = static_cast<std::uint16_t>(x);
    e.y = static_cast<std::uint16_t>(y);
    e.polarity = detail::normalize_polarity(detail::parse_int<long long>(f[3], line_no), line_no);
    detail::check_order_and_bounds(events, e, geometry, record);
    events.push_back(e);
  }
  return make_stream(std::move(events), geometry);
}

/// Parses the binary event format. The sensor geometry comes from the header.
inline EventStream parse_events_binary(std::span<const unsigned char> bytes) {
  if (bytes.size() < detail::kBinaryHeader ||
      std::memcmp(bytes.data(), detail::kBinaryMagic.data(), 4) != 0) {
    throw FormatError("missing EVT1 header", 0);
  }
  SensorGeometry g;
  g.width = detail::get_le<std::uint32_t>(bytes.data() + 4);
  g.height = detail::get_le<std::uint32_t>(bytes.data() + 8);
  const auto count = detail::get_le<std::uint64_t>(bytes.data() + 12);
  const std::size_t available = (bytes.size() - detail::kBinaryHeader) / detail::kBinaryRecord;
  if (count > available) {
    throw FormatError("truncated event payload", static_cast<std::size_t>(available));
  }
  std::vector<Event> events;
  events.reserve(count);
  const unsigned char* p = bytes.data() + detail::kBinaryHeader;
  for (std::uint64_t i = 0; i < count; ++i, p += detail::kBinaryRecord) {
    Event e;
    const auto t = detail::get_le<std::uint64_t>(p);
    if (t > static_cast<std::uint64_t>(INT64_MAX)) throw FormatError("timestamp overflow", i);
    e.t_us = static_cast<std::int64_t>(t);
    e.x = detail::get_le<std::uint16_t>(p + 8);
    e.y = detail::get_le<std::uint16_t>(p + 10);
    e.polarity = detail::normalize_polarity(static_cast<std::int8_t>(p[12]), i);
    detail::check_order_and_bounds(events, e, g, i + 1);
    events.push_back(e);
  }
  return make_stream(std::move(events), g);
}

/// Loads an event file, detecting the binary format by its magic bytes.
/// `geometry` is required for CSV files and ignored for binary ones.
inline EventStream load_events(const std::filesystem::path& path, SensorGeometry geometry) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), detail::kBinaryMagic.data(), 4) == 0) {
    return parse_events_binary(bytes);
  }
  std::istringstream text(std::string(bytes.begin(), bytes.end()));
  return parse_events_csv(text, geometry);
}

inline void write_events_csv(std::ostream& out, const EventStream& s) {
  out << "t_us,x,y,p\n";
  for (const Event& e : s.events) {
    out << e.t_us << ',' << e.x << ',' << e.y << ',' << static_cast<int>(e.polarity) << '\n';
  }
}

inline void write_events_binary(std::ostream& out, const EventStream& s) {
  out.write(detail::kBinaryMagic.data(), 4);
  detail::put_le<std::uint32_t>(out, s.geometry.width);
  detail::put_le<std::uint32_t>(out, s.geometry.height);
  detail::put_le<std::uint64_t>(out, s.events.size());
  for (const Event& e : s.events) {
    detail::put_le<std::uint64_t>(out, static_cast<std::uint64_t>(e.t_us));
    detail::put_le<std::uint16_t>(out, e.x);
    detail::put_le<std::uint16_t>(out, e.y);
    detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(e.polarity));
  }
}

enum class EventFileFormat { Csv, Binary };

inline void save_events(const std::filesystem::path& path, const EventStream& s,
                        EventFileFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  if (format == EventFileFormat::Csv) {
    write_events_csv(out, s);
  } else {
    write_events_binary(out, s);
  }
  if (!out) throw IoError("write failed for " + path.string());
}

/// Joins streams end to end. Stream i is re-based so that it starts at the
/// end of stream i-1 plus `gap_us`; the result keeps the first stream's origin.
inline EventStream concatenate(std::span<const EventStream> streams, std::int64_t gap_us = 0) {
  if (streams.empty()) throw ArgumentError("concatenate: empty stream list");
  if (gap_us < 0) throw ArgumentError("concatenate: negative gap");
  EventStream out;
  out.geometry = streams.front().geometry;
  out.start_us = streams.front().start_us;
  std::size_t total = 0;
  for (const EventStream& s : streams) {
    if (s.geometry != out.geometry) throw GeometryError("concatenate: sensor geometry mismatch");
    total += s.count();
  }
  out.events.reserve(total);
  std::int64_t offset = out.start_us;
  for (std::size_t i = 0; i < streams.size(); ++i) {
    const EventStream& s = streams[i];
    if (i > 0) offset += gap_us;
    for (Event e : s.events) {
      e.t_us = e.t_us - s.start_us + offset;
      out.events.push_back(e);
    }
    offset += s.duration_us;
  }
  out.duration_us = offset - out.start_us;
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic scenes

enum class MotionClass : int {
  TranslateLeft = 0,
  TranslateRight,
  Rotate,
  Expand,
  TranslateUp,
  TranslateDown,
  RotateCounter,
  Contract,
};

inline constexpr std::array<std::string_view, 8> kMotionNames = {
    "translate-left", "translate-right", "rotate",       "expand",
    "translate-up",   "translate-down",  "rotate-counter", "contract"};

inline std::string_view motion_name(MotionClass m) {
  return kMotionNames[static_cast<std::size_t>(m)];
}

inline MotionClass motion_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kMotionNames.size(); ++i) {
    if (kMotionNames[i] == name) return static_cast<MotionClass>(i);
  }
  throw ArgumentError("unknown motion class '" + std::string(name) + "'");
}

struct SyntheticSceneSpec {
  MotionClass motion = MotionClass::TranslateRight;
  std::int64_t duration_us = 1'000'000;
  double event_rate = 10'000.0;  // events per second
  double noise_fraction = 0.0;
  SensorGeometry geometry{64, 64};
  std::uint64_t seed = 0;
};

namespace detail {

/// Smooth-edged bright shape whose motion defines the class. Coordinates are
/// pixels, time is seconds from the clip start.
class AnalyticScene {
 public:
  AnalyticScene(const SyntheticSceneSpec& spec, std::mt19937_64& rng)
      : motion_(spec.motion),
        w_(spec.geometry.width),
        h_(spec.geometry.height),
        duration_s_(static_cast<double>(spec.duration_us) * 1e-6) {
    const double m = std::min(w_, h_);
    const auto jitter = [&](double lo, double hi) { return lo + (hi - lo) * uniform01(rng); };
    radius_ = 0.2 * m * jitter(0.85, 1.15);
    offset_ = jitter(-0.12, 0.12) * m;
    phase_ = jitter(0.0, 2.0 * std::numbers::pi);
    omega_ = 2.0 * std::numbers::pi / jitter(1.2, 1.8);
    bar_half_len_ = 0.35 * m * jitter(0.9, 1.1);
    bar_half_wid_ = 0.08 * m;
  }

  double intensity(double px, double py, double t) const {
    const double s = std::clamp(t / duration_s_, 0.0, 1.0);
    const double m = std::min(w_, h_);
    switch (motion_) {
      case MotionClass::TranslateLeft:
        return disc(px, py, w_ * (0.85 - 0.7 * s), h_ / 2 + offset_, radius_);
      case MotionClass::TranslateRight:
        return disc(px, py, w_ * (0.15 + 0.7 * s), h_ / 2 + offset_, radius_);
      case MotionClass::TranslateUp:
        return disc(px, py, w_ / 2 + offset_, h_ * (0.85 - 0.7 * s), radius_);
      case MotionClass::TranslateDown:
        return disc(px, py, w_ / 2 + offset_, h_ * (0.15 + 0.7 * s), radius_);
      case MotionClass::Expand:
        return disc(px, py, w_ / 2 + offset_, h_ / 2 - offset_, m * (0.08 + 0.3 * s));
      case MotionClass::Contract:
        return disc(px, py, w_ / 2 + offset_, h_ / 2 - offset_, m * (0.38 - 0.3 * s));
      case MotionClass::Rotate:
        return bar(px, py, phase_ + omega_ * t);
      case MotionClass::RotateCounter:
        return bar(px, py, phase_ - omega_ * t);
    }
    return 0.0;
  }

  /// Time derivative of log intensity, the quantity event pixels threshold.
  double log_rate(double px, double py, double t) const {
    constexpr double kFloor = 0.05;
    const double h = 1e-3;
    return (std::log(kFloor + intensity(px, py, t + h)) -
            std::log(kFloor + intensity(px, py, t - h))) /
           (2 * h);
  }

 private:
  static constexpr double kEdge = 0.8;  // edge softness in pixels

  static double disc(double px, double py, double cx, double cy, double r) {
    const double d = std::hypot(px - cx, py - cy);
    return sigmoid((r - d) / kEdge);
  }

  double bar(double px, double py, double angle) const {
    const double dx = px - w_ / 2;
    const double dy = py - h_ / 2;
    const double along = std::abs(dx * std::cos(angle) + dy * std::sin(angle));
    const double across = std::abs(-dx * std::sin(angle) + dy * std::cos(angle));
    return sigmoid((bar_half_len_ - along) / kEdge) * sigmoid((bar_half_wid_ - across) / kEdge);
  }

  MotionClass motion_;
  double w_, h_, duration_s_;
  double radius_ = 0, offset_ = 0, phase_ = 0, omega_ = 0;
  double bar_half_len_ = 0, bar_half_wid_ = 0;
};

}  // namespace detail

/// Renders a labelled synthetic clip. Signal events are drawn where the log
/// intensity of a moving analytic pattern changes, with polarity given by
/// the sign of that change; `noise_fraction` of the events are uniform
/// background noise. The event count is round(rate * duration).
inline std::pair<EventStream, int> generate_synthetic(const SyntheticSceneSpec& spec) {
  if (spec.duration_us <= 0) throw EmptyStreamError("synthetic clip needs a positive duration");
  if (!(spec.event_rate > 0)) throw ArgumentError("event_rate must be positive");
  if (!(spec.noise_fraction >= 0 && spec.noise_fraction <= 1)) {
    throw ArgumentError("noise_fraction must lie in [0, 1]");
  }
  if (spec.geometry.width == 0 || spec.geometry.height == 0 || spec.geometry.width > 0xFFFF ||
      spec.geometry.height > 0xFFFF) {
    throw GeometryError("invalid sensor geometry");
  }
  std::mt19937_64 rng(mix64(spec.seed));
  const detail::AnalyticScene scene(spec, rng);
  const double duration_s = static_cast<double>(spec.duration_us) * 1e-6;
  const double w = spec.geometry.width;
  const double h = spec.geometry.height;

  const auto total = static_cast<std::size_t>(std::llround(spec.event_rate * duration_s));
  const auto noise = static_cast<std::size_t>(std::llround(spec.noise_fraction * total));
  const std::size_t signal = total - noise;

  // Envelope for rejection sampling, estimated on a pixel-centre grid.
  double bound = 0.0;
  for (int k = 0; k < 16; ++k) {
    const double t = duration_s * (k + 0.5) / 16.0;
    for (std::uint32_t y = 0; y < spec.geometry.height; ++y) {
      for (std::uint32_t x = 0; x < spec.geometry.width; ++x) {
        bound = std::max(bound, std::abs(scene.log_rate(x + 0.5, y + 0.5, t)));
      }
    }
  }
  bound *= 1.25;

  std::vector<Event> events;
  events.reserve(total);
  const auto make = [&](double t, double px, double py, int pol) {
    Event e;
    e.t_us = std::min<std::int64_t>(static_cast<std::int64_t>(t * 1e6), spec.duration_us - 1);
    e.x = static_cast<std::uint16_t>(std::min(px, w - 1));
    e.y = static_cast<std::uint16_t>(std::min(py, h - 1));
    e.polarity = static_cast<std::int8_t>(pol);
    return e;
  };
  if (signal > 0 && !(bound > 0)) {
    throw NumericError("synthetic scene produced no intensity change");
  }
  while (events.size() < signal) {
    const double t = uniform01(rng) * duration_s;
    const double px = uniform01(rng) * w;
    const double py = uniform01(rng) * h;
    const double r = scene.log_rate(px, py, t);
    if (uniform01(rng) * bound < std::abs(r)) events.push_back(make(t, px, py, r > 0 ? 1 : -1));
  }
  for (std::size_t i = 0; i < noise; ++i) {
    const double t = uniform01(rng) * duration_s;
    const double px = uniform01(rng) * w;
    const double py = uniform01(rng) * h;
    events.push_back(make(t, px, py, uniform01(rng) < 0.5 ? 1 : -1));
  }
  std::stable_sort(events.begin(), events.end(),
                   [](const Event& a, const Event& b) { return a.t_us < b.t_us; });

  EventStream s;
  s.events = std::move(events);
  s.geometry = spec.geometry;
  s.start_us = 0;
  s.duration_us = spec.duration_us;
  return {std::move(s), static_cast<int>(spec.motion)};
}

}  // namespace pastssm
