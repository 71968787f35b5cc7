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
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "pastssm/error.hpp"
#include "pastssm/events.hpp"
#include "pastssm/numeric.hpp"

namespace pastssm {

struct ManifestEntry {
  std::string path;  // relative to the manifest directory unless absolute
  std::size_t label = 0;
  std::int64_t duration_us = 0;          // 0: span of the events in the file
  std::optional<std::int64_t> start_us;  // unset: first event time
};

struct DatasetManifest {
  std::vector<std::string> classes;
  std::vector<ManifestEntry> samples;
  std::string split = "train";
  std::filesystem::path root;  // directory the manifest was read from

  std::filesystem::path resolve(std::size_t i) const {
    const std::filesystem::path p = samples.at(i).path;
    return p.is_absolute() ? p : root / p;
  }

  void validate() const {
    if (classes.empty()) throw FormatError("manifest lists no classes", 0);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (samples[i].label >= classes.size()) {
        throw FormatError("sample label " + std::to_string(samples[i].label) + " has no class name", i);
      }
    }
  }
};

inline nlohmann::json manifest_json(const DatasetManifest& m) {
  nlohmann::json j;
  j["classes"] = m.classes;
  j["split"] = m.split;
  j["samples"] = nlohmann::json::array();
  for (const auto& s : m.samples) {
    nlohmann::json e = {{"path", s.path}, {"label", s.label}, {"duration_us", s.duration_us}};
    if (s.start_us) e["start_us"] = *s.start_us;
    j["samples"].push_back(std::move(e));
  }
  return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j, std::filesystem::path root = {}) {
  DatasetManifest m;
  try {
    m.classes = j.at("classes").get<std::vector<std::string>>();
    m.split = j.value("split", std::string("train"));
    for (const auto& s : j.at("samples")) {
      ManifestEntry e{s.at("path").get<std::string>(), s.at("label").get<std::size_t>(),
                      s.value("duration_us", std::int64_t{0}), std::nullopt};
      if (s.contains("start_us")) e.start_us = s.at("start_us").get<std::int64_t>();
      m.samples.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what(), 0);
  }
  m.root = std::move(root);
  m.validate();
  return m;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest " + path.string() + ": " + e.what(), 0);
  }
  DatasetManifest m = manifest_from_json(j, path.parent_path());
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    if (!std::filesystem::exists(m.resolve(i))) throw IoError("manifest entry missing: " + m.resolve(i).string());
  }
  return m;
}

inline void save_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << manifest_json(m).dump(2) << '\n';
}

struct LabelledStream {
  EventStream stream;
  std::size_t label = 0;
  std::string id;
};

inline std::vector<LabelledStream> load_samples(const DatasetManifest& m) {
  std::vector<LabelledStream> out;
  out.reserve(m.samples.size());
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    LabelledStream s;
    s.stream = load_events(m.resolve(i), {});
    // Restore the clip's own time span, which the event file alone cannot carry.
    const ManifestEntry& e = m.samples[i];
    if (e.start_us || e.duration_us > 0) {
      const std::int64_t end = s.stream.end_us();
      if (e.start_us) s.stream.start_us = *e.start_us;
      s.stream.duration_us = e.duration_us > 0 ? e.duration_us : end - s.stream.start_us;
      const bool inside = s.stream.empty() || (s.stream.events.front().t_us >= s.stream.start_us &&
                                               s.stream.events.back().t_us <= s.stream.end_us());
      if (s.stream.duration_us < 0 || !inside) {
        throw FormatError("manifest entry " + e.path + ": events fall outside the declared time span", i);
      }
    }
    s.label = m.samples[i].label;
    s.id = m.samples[i].path;
    out.push_back(std::move(s));
  }
  return out;
}

struct SyntheticDatasetSpec {
  std::size_t classes = 4;
  std::size_t per_class = 8;
  std::int64_t min_duration_us = 500'000;
  std::int64_t max_duration_us = 1'000'000;
  std::int64_t segment_us = 0;  // > 0: clips are concatenations of segments at most this long
  double event_rate = 10'000.0;
  double noise_fraction = 0.05;
  SensorGeometry geometry{32, 32};
  std::uint64_t seed = 0;

  void validate() const {
    if (classes == 0 || classes > kMotionNames.size()) {
      throw ArgumentError("synthetic dataset: classes must lie in [1, " + std::to_string(kMotionNames.size()) + "]");
    }
    if (per_class == 0) throw ArgumentError("synthetic dataset: per_class must be positive");
    if (min_duration_us <= 0 || max_duration_us < min_duration_us) {
      throw ArgumentError("synthetic dataset: need 0 < min duration <= max duration");
    }
    if (segment_us < 0) throw ArgumentError("synthetic dataset: negative segment length");
  }
};

/// One clip of `motion` lasting `duration_us`, built from independently
/// seeded segments joined end to end when `segment_us` is set.
inline EventStream synthetic_clip(MotionClass motion, std::int64_t duration_us, const SyntheticDatasetSpec& spec,
                                  std::uint64_t seed) {
  SyntheticSceneSpec scene;
  scene.motion = motion;
  scene.event_rate = spec.event_rate;
  scene.noise_fraction = spec.noise_fraction;
  scene.geometry = spec.geometry;
  if (spec.segment_us == 0 || duration_us <= spec.segment_us) {
    scene.duration_us = duration_us;
    scene.seed = seed;
    return generate_synthetic(scene).first;
  }
  std::vector<EventStream> parts;
  std::int64_t left = duration_us;
  for (std::uint64_t k = 0; left > 0; ++k) {
    scene.duration_us = std::min(left, spec.segment_us);
    scene.seed = mix64(seed + k);
    parts.push_back(generate_synthetic(scene).first);
    left -= scene.duration_us;
  }
  return concatenate(parts);
}

/// Draws the `classes x per_class` clips of `spec` in memory, class-minor
/// order, with ids `<motion>_<i>`.
inline std::vector<LabelledStream> synthetic_samples(const SyntheticDatasetSpec& spec) {
  spec.validate();
  std::vector<LabelledStream> out;
  out.reserve(spec.classes * spec.per_class);
  std::mt19937_64 rng(mix64(spec.seed));
  std::uniform_int_distribution<std::int64_t> dur(spec.min_duration_us, spec.max_duration_us);
  for (std::size_t i = 0; i < spec.per_class; ++i) {
    for (std::size_t c = 0; c < spec.classes; ++c) {
      const std::int64_t d = dur(rng);
      const std::uint64_t clip_seed = rng();
      out.push_back({synthetic_clip(static_cast<MotionClass>(c), d, spec, clip_seed), c,
                     std::string(kMotionNames[c]) + "_" + std::to_string(i)});
    }
  }
  return out;
}

/// Writes the clips of `synthetic_samples(spec)` as binary event files plus
/// manifest.json into `out_dir` and returns the manifest.
inline DatasetManifest generate_dataset(const SyntheticDatasetSpec& spec, const std::filesystem::path& out_dir,
                                        const std::string& split = "train") {
  const std::vector<LabelledStream> clips = synthetic_samples(spec);
  std::filesystem::create_directories(out_dir);
  DatasetManifest m;
  m.split = split;
  m.root = out_dir;
  for (std::size_t c = 0; c < spec.classes; ++c) m.classes.emplace_back(kMotionNames[c]);
  for (const LabelledStream& s : clips) {
    const std::string name = s.id + ".evt";
    save_events(out_dir / name, s.stream, EventFileFormat::Binary);
    m.samples.push_back({name, s.label, s.stream.duration_us, s.stream.start_us});
  }
  save_manifest(out_dir / "manifest.json", m);
  return m;
}

}  // namespace pastssm
