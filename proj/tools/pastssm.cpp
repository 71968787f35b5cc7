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

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "pastssm.hpp"

namespace fs = std::filesystem;
using namespace pastssm;

namespace {

// "LO..HI" in seconds.
std::pair<double, double> parse_range(const std::string& s) {
  const auto dots = s.find("..");
  if (dots == std::string::npos) throw ArgumentError("expected LO..HI, got '" + s + "'");
  const double lo = std::stod(s.substr(0, dots));
  const double hi = std::stod(s.substr(dots + 2));
  if (!(lo > 0) || hi < lo) throw ArgumentError("duration range needs 0 < LO <= HI");
  return {lo, hi};
}

int cmd_generate(std::size_t classes, std::size_t per_class, const std::string& range, const fs::path& out,
                 std::uint64_t seed, double rate, double noise, double segment_s, std::uint32_t sensor,
                 const std::string& split) {
  const auto [lo, hi] = parse_range(range);
  SyntheticDatasetSpec spec;
  spec.classes = classes;
  spec.per_class = per_class;
  spec.min_duration_us = static_cast<std::int64_t>(lo * 1e6);
  spec.max_duration_us = static_cast<std::int64_t>(hi * 1e6);
  spec.segment_us = static_cast<std::int64_t>(segment_s * 1e6);
  spec.event_rate = rate;
  spec.noise_fraction = noise;
  spec.geometry = {sensor, sensor};
  spec.seed = seed;
  const DatasetManifest m = generate_dataset(spec, out, split);
  std::cout << "wrote " << m.samples.size() << " samples to " << (out / "manifest.json").string() << '\n';
  return 0;
}

int cmd_preprocess(const fs::path& manifest, double freq, const std::string& mode, std::size_t group,
                   std::size_t size, const fs::path& out) {
  const DatasetManifest m = load_manifest(manifest);
  SamplingConfig cfg;
  cfg.frequency_hz = freq;
  cfg.mode = aggregation_mode_from(mode);
  cfg.group_size = group;
  cfg.height = size;
  cfg.width = size;
  fs::create_directories(out);
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    const EventStream s = load_events(m.resolve(i), {});
    const EventFrameStack st = build_stack(s, cfg);
    dump_stack(out / fs::path(m.samples[i].path).stem(), st, cfg);
  }
  std::cout << "dumped " << m.samples.size() << " stacks to " << out.string() << '\n';
  return 0;
}

int cmd_train(const fs::path& config, const std::vector<std::string>& overrides) {
  const train::TrainConfig cfg = train::load_config(config, overrides);
  const train::TrainResult r = train::train(cfg, &std::cout);
  std::cout << "checkpoint " << r.checkpoint.string() << '\n';
  if (!cfg.val_manifest.empty()) {
    std::cout << "val top1 " << train::evaluate(r.checkpoint, cfg.val_manifest, cfg.sampling.frequency_hz) << '\n';
  }
  return 0;
}

int cmd_eval(const fs::path& checkpoint, const fs::path& manifest, double freq) {
  std::cout << train::evaluate(checkpoint, manifest, freq) << '\n';
  return 0;
}

int cmd_sweep(const fs::path& config, const std::vector<std::string>& overrides, const fs::path& out) {
  std::ifstream in(config);
  if (!in) throw IoError("cannot open " + config.string());
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw FormatError(config.string() + " is not valid JSON", 0);
  for (const auto& o : overrides) train::apply_override(j, o);
  const train::SweepConfig sweep = train::sweep_from_json(j);
  const DatasetManifest train_m = load_manifest(sweep.base.manifest);
  const auto train_set = load_samples(train_m);
  const auto eval_set = sweep.base.val_manifest.empty() ? train_set : load_samples(load_manifest(sweep.base.val_manifest));
  const auto rows = train::sweep_frequency(sweep, train_set, eval_set, train_m.classes.size(), &std::cerr);
  std::ofstream csv(out);
  if (!csv) throw IoError("cannot write " + out.string());
  train::write_sweep_csv(csv, rows);
  int failed = 0;
  for (const auto& r : rows) {
    if (!r.error.empty()) {
      std::cerr << "cell " << train::to_string(r.variant) << " " << r.train_f << " -> " << r.eval_f << ": " << r.error
                << '\n';
      ++failed;
    }
  }
  for (auto v : sweep.variants) std::cout << train::to_string(v) << " max drop " << train::max_drop(rows, v) << '\n';
  return failed ? 2 : 0;
}

int cmd_inspect(const fs::path& checkpoint, const fs::path& sample, long label) {
  const auto pipe = train::load_pipeline(checkpoint);
  const EventStream s = load_events(sample, {});
  const std::size_t y = label >= 0 ? static_cast<std::size_t>(label) : 0;
  nlohmann::json j = train::inspect(*pipe, s, y);
  if (label < 0) j.erase("label");
  std::cout << j.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pastssm: event-stream recognition with learned frame selection and a selective SSM"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("generate", "write a synthetic labelled event dataset and manifest");
  std::size_t classes = 4, per_class = 8;
  std::string range = "0.5..1.0", split = "train";
  fs::path out_dir;
  std::uint64_t seed = 0;
  double rate = 10'000, noise = 0.05, segment = 0;
  std::uint32_t sensor = 32;
  gen->add_option("--classes", classes, "number of motion classes (1-8)");
  gen->add_option("--per-class", per_class, "samples per class");
  gen->add_option("--duration-range", range, "clip duration range in seconds, LO..HI");
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--seed", seed, "random seed");
  gen->add_option("--rate", rate, "events per second");
  gen->add_option("--noise", noise, "fraction of uniform noise events");
  gen->add_option("--segment", segment, "build clips from segments at most this many seconds long (0: one piece)");
  gen->add_option("--sensor", sensor, "square sensor side in pixels");
  gen->add_option("--split", split, "split tag written to the manifest");

  auto* pre = app.add_subcommand("preprocess", "dump aggregated frame stacks for every sample");
  fs::path manifest;
  double freq = 20;
  std::string mode = "event-counts";
  std::size_t group = 300, size = 32;
  pre->add_option("--manifest", manifest)->required();
  pre->add_option("--freq", freq, "sampling frequency in Hz")->required();
  pre->add_option("--mode", mode, "event-counts or time-windows");
  pre->add_option("--group-size", group, "events per group in event-count mode");
  pre->add_option("--size", size, "frame side in pixels");
  pre->add_option("--out", out_dir)->required();

  auto* tr = app.add_subcommand("train", "train a model from a JSON config");
  fs::path config;
  std::vector<std::string> overrides;
  tr->add_option("--config", config)->required();
  tr->add_option("--override", overrides, "key.path=value, applied after the config file");

  auto* ev = app.add_subcommand("eval", "top-1 accuracy of a checkpoint");
  fs::path checkpoint;
  ev->add_option("--checkpoint", checkpoint)->required();
  ev->add_option("--manifest", manifest)->required();
  ev->add_option("--freq", freq, "evaluation frequency in Hz")->required();

  auto* sw = app.add_subcommand("sweep", "train/evaluate across a frequency grid");
  fs::path results = "results.csv";
  sw->add_option("--config", config)->required();
  sw->add_option("--override", overrides, "key.path=value applied to the sweep document");
  sw->add_option("--out", results, "results CSV");

  auto* ins = app.add_subcommand("inspect", "selected frames and loss breakdown for one sample");
  fs::path sample;
  long label = -1;
  ins->add_option("--checkpoint", checkpoint)->required();
  ins->add_option("--sample", sample)->required();
  ins->add_option("--label", label, "true class id, for the classification term");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return cmd_generate(classes, per_class, range, out_dir, seed, rate, noise, segment, sensor, split);
    if (*pre) return cmd_preprocess(manifest, freq, mode, group, size, out_dir);
    if (*tr) return cmd_train(config, overrides);
    if (*ev) return cmd_eval(checkpoint, manifest, freq);
    if (*sw) return cmd_sweep(config, overrides, results);
    if (*ins) return cmd_inspect(checkpoint, sample, label);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
