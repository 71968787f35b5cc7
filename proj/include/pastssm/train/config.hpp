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
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pastssm/aggregation.hpp"
#include "pastssm/error.hpp"
#include "pastssm/msg_loss.hpp"
#include "pastssm/ssm/model.hpp"

namespace pastssm::train {

/// Frame pipeline compared in the frequency sweep.
enum class Variant { TimeWindows, EventCounts, EventCountsPeas };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::TimeWindows: return "time-windows";
    case Variant::EventCounts: return "event-counts";
    case Variant::EventCountsPeas: return "event-counts+peas";
  }
  return "?";
}

inline Variant variant_from(std::string_view s) {
  if (s == "time-windows") return Variant::TimeWindows;
  if (s == "event-counts") return Variant::EventCounts;
  if (s == "event-counts+peas") return Variant::EventCountsPeas;
  throw ArgumentError("unknown variant '" + std::string(s) + "' (time-windows, event-counts, event-counts+peas)");
}

/// Model size: a named preset, optionally narrowed. Zero keeps the preset value.
struct ModelSpec {
  std::string preset = "tiny";
  std::size_t layers = 0;
  std::size_t dim = 0;
  std::size_t patch = 16;
  std::size_t state = 16;

  ssm::ModelConfig resolve(std::size_t classes, std::size_t frames, std::size_t height, std::size_t width) const {
    ssm::ModelConfig c = ssm::ModelConfig::from_preset(preset, classes, frames, height, width);
    if (layers) c.layers = layers;
    if (dim) c.dim = dim;
    c.patch = patch;
    c.state = state;
    c.validate();
    return c;
  }
};

struct AugmentConfig {
  bool random_crop = false;
  std::size_t crop_padding = 4;  // maximum shift in pixels
  bool horizontal_flip = false;
};

struct TrainConfig {
  std::string manifest;
  std::string val_manifest;  // optional; train reports accuracy here and the sweep evaluates here
  SamplingConfig sampling;
  std::size_t frames_k = 8;
  bool use_peas = true;
  ModelSpec model;
  std::size_t epochs = 100;
  std::size_t batch_size = 8;
  double lr = 1e-3;
  double weight_decay = 0.05;
  std::size_t warmup_epochs = 5;
  std::string schedule = "cosine";  // cosine | constant
  std::uint64_t seed = 0;
  AugmentConfig augment;
  double tau = 1.0;  // Gumbel-softmax temperature
  msg::HistogramConfig histogram;
  std::string output_dir = "run";
  double stop_accuracy = 0.0;  // > 0: stop once eval-mode train accuracy reaches it
  std::size_t eval_every = 0;  // epochs between eval-mode train accuracy checks, 0 = never
  std::size_t threads = 1;     // evaluation workers

  Variant variant() const {
    if (sampling.mode == AggregationMode::TimeWindows) return Variant::TimeWindows;
    return use_peas ? Variant::EventCountsPeas : Variant::EventCounts;
  }

  void set_variant(Variant v) {
    sampling.mode = v == Variant::TimeWindows ? AggregationMode::TimeWindows : AggregationMode::EventCounts;
    use_peas = v == Variant::EventCountsPeas;
  }

  void validate() const {
    sampling.validate();
    histogram.validate();
    if (frames_k == 0) throw ArgumentError("train: frames_k must be positive");
    if (epochs == 0) throw ArgumentError("train: epochs must be positive");
    if (batch_size == 0) throw ArgumentError("train: batch_size must be at least 1");
    if (warmup_epochs > epochs) throw ArgumentError("train: warmup_epochs exceeds epochs");
    if (!(lr > 0) || weight_decay < 0) throw ArgumentError("train: lr must be positive, weight_decay non-negative");
    if (schedule != "cosine" && schedule != "constant") {
      throw ArgumentError("train: unknown schedule '" + schedule + "'");
    }
    if (!(tau > 0)) throw DomainError("train: tau must be positive");
    if (stop_accuracy < 0 || stop_accuracy > 1) throw ArgumentError("train: stop_accuracy must lie in [0, 1]");
    if (stop_accuracy > 0 && eval_every == 0) throw ArgumentError("train: stop_accuracy needs eval_every > 0");
  }
};

inline nlohmann::json to_json(const SamplingConfig& s) {
  return {{"frequency_hz", s.frequency_hz},        {"group_size", s.group_size},
          {"window_us", s.window_us},              {"mode", to_string(s.mode)},
          {"height", s.height},                    {"width", s.width},
          {"representation", to_string(s.representation)}};
}

inline nlohmann::json to_json(const ssm::ModelConfig& c) {
  return {{"preset", c.preset},   {"layers", c.layers}, {"dim", c.dim},       {"patch", c.patch},
          {"frames", c.frames},   {"classes", c.classes}, {"height", c.height}, {"width", c.width},
          {"state", c.state},     {"expand", c.expand}, {"conv_width", c.conv_width}};
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"manifest", c.manifest},
          {"val_manifest", c.val_manifest},
          {"sampling", to_json(c.sampling)},
          {"frames_k", c.frames_k},
          {"use_peas", c.use_peas},
          {"model",
           {{"preset", c.model.preset},
            {"layers", c.model.layers},
            {"dim", c.model.dim},
            {"patch", c.model.patch},
            {"state", c.model.state}}},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"warmup_epochs", c.warmup_epochs},
          {"schedule", c.schedule},
          {"seed", c.seed},
          {"augment",
           {{"random_crop", c.augment.random_crop},
            {"crop_padding", c.augment.crop_padding},
            {"horizontal_flip", c.augment.horizontal_flip}}},
          {"tau", c.tau},
          {"histogram",
           {{"bins", c.histogram.bins},
            {"bandwidth", c.histogram.bandwidth},
            {"coord_weight", c.histogram.coord_weight}}},
          {"output_dir", c.output_dir},
          {"stop_accuracy", c.stop_accuracy},
          {"eval_every", c.eval_every},
          {"threads", c.threads}};
}

namespace detail {

/// Copies `src[key]` into `dst` when present and rejects keys not in
/// `allowed`, so a misspelt option fails loudly.
class Reader {
 public:
  Reader(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ArgumentError(where_ + ": expected an object");
  }

  template <typename V>
  Reader& get(const char* key, V& dst) {
    seen_.emplace_back(key);
    if (!j_.contains(key)) return *this;
    try {
      dst = j_.at(key).get<V>();
    } catch (const nlohmann::json::exception&) {
      throw ArgumentError(where_ + "." + key + ": wrong type (" + j_.at(key).dump() + ")");
    }
    return *this;
  }

  const nlohmann::json* child(const char* key) {
    seen_.emplace_back(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (std::find(seen_.begin(), seen_.end(), k) == seen_.end()) {
        throw ArgumentError(where_ + ": unknown key '" + k + "'");
      }
    }
  }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::vector<std::string> seen_;
};

}  // namespace detail

inline SamplingConfig sampling_from_json(const nlohmann::json& j, SamplingConfig s = {}) {
  detail::Reader r(j, "sampling");
  std::string mode = to_string(s.mode), rep = to_string(s.representation);
  r.get("frequency_hz", s.frequency_hz)
      .get("group_size", s.group_size)
      .get("window_us", s.window_us)
      .get("mode", mode)
      .get("height", s.height)
      .get("width", s.width)
      .get("representation", rep);
  r.finish();
  s.mode = aggregation_mode_from(mode);
  s.representation = frame_kind_from(rep);
  return s;
}

inline ssm::ModelConfig model_config_from_json(const nlohmann::json& j) {
  ssm::ModelConfig c;
  detail::Reader r(j, "model");
  r.get("preset", c.preset)
      .get("layers", c.layers)
      .get("dim", c.dim)
      .get("patch", c.patch)
      .get("frames", c.frames)
      .get("classes", c.classes)
      .get("height", c.height)
      .get("width", c.width)
      .get("state", c.state)
      .get("expand", c.expand)
      .get("conv_width", c.conv_width);
  r.finish();
  c.validate();
  return c;
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  detail::Reader r(j, "config");
  r.get("manifest", c.manifest)
      .get("val_manifest", c.val_manifest)
      .get("frames_k", c.frames_k)
      .get("use_peas", c.use_peas)
      .get("epochs", c.epochs)
      .get("batch_size", c.batch_size)
      .get("lr", c.lr)
      .get("weight_decay", c.weight_decay)
      .get("warmup_epochs", c.warmup_epochs)
      .get("schedule", c.schedule)
      .get("seed", c.seed)
      .get("tau", c.tau)
      .get("output_dir", c.output_dir)
      .get("stop_accuracy", c.stop_accuracy)
      .get("eval_every", c.eval_every)
      .get("threads", c.threads);
  if (const auto* s = r.child("sampling")) c.sampling = sampling_from_json(*s, c.sampling);
  if (const auto* m = r.child("model")) {
    detail::Reader mr(*m, "model");
    mr.get("preset", c.model.preset)
        .get("layers", c.model.layers)
        .get("dim", c.model.dim)
        .get("patch", c.model.patch)
        .get("state", c.model.state);
    mr.finish();
  }
  if (const auto* a = r.child("augment")) {
    detail::Reader ar(*a, "augment");
    ar.get("random_crop", c.augment.random_crop)
        .get("crop_padding", c.augment.crop_padding)
        .get("horizontal_flip", c.augment.horizontal_flip);
    ar.finish();
  }
  if (const auto* h = r.child("histogram")) {
    detail::Reader hr(*h, "histogram");
    hr.get("bins", c.histogram.bins).get("bandwidth", c.histogram.bandwidth).get("coord_weight", c.histogram.coord_weight);
    hr.finish();
  }
  r.finish();
  c.validate();
  return c;
}

/// Applies `a.b.c=value` to a JSON document. The value is parsed as JSON
/// when possible (numbers, booleans, arrays) and taken as a string otherwise.
inline void apply_override(nlohmann::json& j, std::string_view assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ArgumentError("override '" + std::string(assignment) + "' is not key=value");
  }
  const std::string_view key = assignment.substr(0, eq);
  const std::string value(assignment.substr(eq + 1));
  nlohmann::json* node = &j;
  std::size_t pos = 0;
  while (true) {
    const std::size_t dot = key.find('.', pos);
    const std::string part(key.substr(pos, dot == std::string_view::npos ? std::string_view::npos : dot - pos));
    if (part.empty()) throw ArgumentError("override '" + std::string(assignment) + "' has an empty key segment");
    if (!node->is_object()) *node = nlohmann::json::object();
    node = &(*node)[part];
    if (dot == std::string_view::npos) break;
    pos = dot + 1;
  }
  nlohmann::json parsed = nlohmann::json::parse(value, nullptr, false);
  *node = parsed.is_discarded() ? nlohmann::json(value) : std::move(parsed);
}

inline TrainConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw FormatError("config " + path.string() + " is not valid JSON", 0);
  for (const auto& o : overrides) apply_override(j, o);
  return config_from_json(j);
}

/// Learning rate at optimizer step `step` (0-based): linear ramp from 0 over
/// the warm-up epochs, then cosine decay to 0 at the last step.
inline double lr_at(std::size_t step, std::size_t steps_per_epoch, const TrainConfig& cfg) {
  const std::size_t warm = cfg.warmup_epochs * steps_per_epoch;
  const std::size_t total = cfg.epochs * steps_per_epoch;
  if (step < warm) return cfg.lr * static_cast<double>(step) / static_cast<double>(warm);
  if (cfg.schedule == "constant") return cfg.lr;
  const std::size_t span = total > warm + 1 ? total - 1 - warm : 1;
  const double progress = std::min(1.0, static_cast<double>(step - warm) / static_cast<double>(span));
  return 0.5 * cfg.lr * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace pastssm::train
