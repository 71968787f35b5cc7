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
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "pastssm/checkpoint.hpp"
#include "pastssm/dataset.hpp"
#include "pastssm/train/config.hpp"
#include "pastssm/train/pipeline.hpp"

namespace pastssm::train {

/// Training runs in single precision; checkpoints store float32 anyway.
using Real = float;

struct MetricsRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;  // optimizer steps taken so far
  msg::LossBreakdown loss;  // epoch means
  double ms_padded = std::numeric_limits<double>::quiet_NaN();  // mean MS over samples with padding
  std::size_t padded_samples = 0;
  double top1 = 0;  // train-mode accuracy over the epoch
  double eval_top1 = std::numeric_limits<double>::quiet_NaN();
  double lr = 0;  // rate of the epoch's last step
};

inline const char* kMetricsHeader = "epoch,step,weie,iemi,ms,ms_padded,cls,total,top1,eval_top1,lr";

inline std::string metrics_row(const MetricsRecord& m) {
  std::ostringstream o;
  o << std::setprecision(9);
  const auto opt = [&](double v) {
    if (std::isfinite(v)) o << v;
  };
  o << m.epoch << ',' << m.step << ',' << m.loss.weie << ',' << m.loss.iemi << ',' << m.loss.ms << ',';
  opt(m.ms_padded);
  o << ',' << m.loss.cls << ',' << m.loss.total << ',' << m.top1 << ',';
  opt(m.eval_top1);
  o << ',' << m.lr;
  return o.str();
}

struct TrainResult {
  std::vector<MetricsRecord> history;
  std::filesystem::path checkpoint;  // empty when nothing was written
};

/// Cached stacks of a dataset at one frequency.
template <typename T>
std::vector<EventFrameStack> build_stacks(const Pipeline<T>& pipe, const std::vector<LabelledStream>& data,
                                          double frequency_hz) {
  std::vector<EventFrameStack> out;
  out.reserve(data.size());
  for (const auto& s : data) {
    try {
      out.push_back(pipe.stack(s.stream, frequency_hz));
    } catch (const Error& e) {
      throw TrainingError("sample '" + s.id + "': " + e.what());
    }
  }
  return out;
}

/// Eval-mode top-1 accuracy over prepared stacks.
template <typename T>
double accuracy(const Pipeline<T>& pipe, const std::vector<EventFrameStack>& stacks,
                const std::vector<LabelledStream>& data, std::size_t threads = 1) {
  if (stacks.empty()) return 0.0;
  std::vector<char> hit(stacks.size(), 0);
  std::vector<std::string> failure(stacks.size());
  const auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < stacks.size(); i += stride) {
      try {
        hit[i] = pipe.predict(stacks[i]) == data[i].label;
      } catch (const std::exception& e) {
        failure[i] = e.what();
      }
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, stacks.size()));
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
    for (auto& th : pool) th.join();
  }
  for (std::size_t i = 0; i < failure.size(); ++i) {
    if (!failure[i].empty()) throw TrainingError("evaluating sample '" + data[i].id + "': " + failure[i]);
  }
  return static_cast<double>(std::count(hit.begin(), hit.end(), 1)) / static_cast<double>(stacks.size());
}

template <typename T>
double accuracy(const Pipeline<T>& pipe, const std::vector<LabelledStream>& data, double frequency_hz) {
  return accuracy(pipe, build_stacks(pipe, data, frequency_hz), data, pipe.config().threads);
}

/// Sample visiting order of one epoch, a pure function of (seed, epoch).
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  const CounterRng rng = CounterRng(seed).fork(0x6f72646572ULL).fork(epoch);
  std::vector<std::pair<std::uint64_t, std::size_t>> keyed(n);
  for (std::size_t i = 0; i < n; ++i) keyed[i] = {rng.bits(i), i};
  std::sort(keyed.begin(), keyed.end());
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = keyed[i].second;
  return order;
}

/// Trains `pipe` in place. Each batch is padded to its longest stack, every
/// sample is differentiated on its own tape with the loss scaled by 1/B, and
/// gradients accumulate on the parameters in batch order before one AdamW
/// step. `log` receives one line per epoch.
template <typename T>
TrainResult fit(Pipeline<T>& pipe, const std::vector<LabelledStream>& data, std::ostream* log = nullptr) {
  const TrainConfig& cfg = pipe.config();
  if (data.empty()) throw EmptyStreamError("training set is empty");
  const std::vector<EventFrameStack> stacks = build_stacks(pipe, data, cfg.sampling.frequency_hz);
  const std::size_t n = data.size();
  const std::size_t per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const ad::AdamWConfig adam{cfg.weight_decay};
  auto& store = pipe.store();
  TrainResult result;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto order = epoch_order(n, cfg.seed, epoch);
    MetricsRecord rec;
    rec.epoch = epoch;
    CompensatedSum<double> weie, iemi, ms, cls, total, ms_pad;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const std::size_t lo = b * cfg.batch_size, hi = std::min(n, lo + cfg.batch_size);
      std::size_t p_max = 0;
      for (std::size_t i = lo; i < hi; ++i) p_max = std::max(p_max, stacks[order[i]].total());
      const double lr = lr_at(step, per_epoch, cfg);
      store.zero_grad();
      for (std::size_t i = lo; i < hi; ++i) {
        const std::size_t idx = order[i];
        try {
          EventFrameStack st = stacks[idx];
          if (cfg.use_peas) pad_stack(st, p_max);
          augment_stack(st, cfg.augment, CounterRng(cfg.seed).fork(0x617567ULL).fork(epoch).fork(idx));
          ad::Tape<T> tape;
          StepResult<T> r;
          {
            ad::TapeScope<T> scope(tape);
            r = pipe.run(st, data[idx].label, peas::MaskMode::Train, peas::NoiseKey{cfg.seed, epoch, idx});
          }
          tape.backward(r.objective.total, static_cast<T>(1.0 / static_cast<double>(hi - lo)));
          const msg::LossBreakdown lb = r.breakdown();
          weie.add(lb.weie);
          iemi.add(lb.iemi);
          ms.add(lb.ms);
          cls.add(lb.cls);
          total.add(lb.total);
          if (st.pad_count > 0) {
            ms_pad.add(lb.ms);
            ++rec.padded_samples;
          }
          correct += r.predicted() == data[idx].label;
        } catch (const Error& e) {
          throw TrainingError("sample '" + data[idx].id + "' epoch " + std::to_string(epoch) + " step " +
                              std::to_string(step) + ": " + e.what());
        }
      }
      try {
        ad::adamw_step(store, lr, adam);
      } catch (const Error& e) {
        throw TrainingError("optimizer epoch " + std::to_string(epoch) + " step " + std::to_string(step) + ": " +
                            e.what());
      }
      rec.lr = lr;
      ++step;
    }
    store.zero_grad();
    const double dn = static_cast<double>(n);
    rec.step = step;
    rec.loss = {weie.value() / dn, iemi.value() / dn, ms.value() / dn, cls.value() / dn, total.value() / dn};
    if (rec.padded_samples > 0) rec.ms_padded = ms_pad.value() / static_cast<double>(rec.padded_samples);
    rec.top1 = static_cast<double>(correct) / dn;
    const bool last = epoch + 1 == cfg.epochs;
    if (cfg.eval_every > 0 && ((epoch + 1) % cfg.eval_every == 0 || last)) {
      rec.eval_top1 = accuracy(pipe, stacks, data, cfg.threads);
    }
    result.history.push_back(rec);
    if (log) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      *log << "epoch " << epoch << " loss " << rec.loss.total << " cls " << rec.loss.cls << " ms " << rec.loss.ms
           << " top1 " << rec.top1;
      if (std::isfinite(rec.eval_top1)) *log << " eval_top1 " << rec.eval_top1;
      *log << " lr " << rec.lr << " (" << std::fixed << std::setprecision(1) << secs << "s)" << std::defaultfloat
           << std::setprecision(6) << '\n';
    }
    if (cfg.stop_accuracy > 0 && std::isfinite(rec.eval_top1) && rec.eval_top1 >= cfg.stop_accuracy) break;
  }
  return result;
}

template <typename T>
nlohmann::json checkpoint_meta(const Pipeline<T>& pipe, const std::vector<std::string>& classes) {
  return {{"format", "pastssm-checkpoint"},
          {"dtype", "float32"},
          {"classes", classes},
          {"model", to_json(pipe.model_config())},
          {"variant", to_string(pipe.config().variant())},
          {"train", to_json(pipe.config())}};
}

inline void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRecord>& history) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << kMetricsHeader << '\n';
  for (const auto& m : history) out << metrics_row(m) << '\n';
}

/// Loads the manifest, trains, and writes `checkpoint.pssm` (+ sidecar) and
/// `metrics.csv` into the output directory.
inline TrainResult train(const TrainConfig& cfg, std::ostream* log = nullptr) {
  cfg.validate();
  const DatasetManifest m = load_manifest(cfg.manifest);
  const std::vector<LabelledStream> data = load_samples(m);
  Pipeline<Real> pipe(cfg, m.classes.size());
  TrainResult r = fit(pipe, data, log);
  const std::filesystem::path dir = cfg.output_dir;
  std::filesystem::create_directories(dir);
  r.checkpoint = dir / "checkpoint.pssm";
  save_checkpoint(r.checkpoint, pipe.store(), checkpoint_meta(pipe, m.classes));
  write_metrics_csv(dir / "metrics.csv", r.history);
  return r;
}

/// Rebuilds the pipeline recorded in a checkpoint sidecar and loads its weights.
inline std::unique_ptr<Pipeline<Real>> load_pipeline(const std::filesystem::path& checkpoint) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  if (ck.meta.is_null()) throw IoError("checkpoint sidecar missing: " + sidecar_path(checkpoint).string());
  TrainConfig cfg;
  std::size_t classes = 0;
  try {
    cfg = config_from_json(ck.meta.at("train"));
    classes = ck.meta.at("classes").size();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint sidecar: ") + e.what(), 0);
  }
  auto pipe = std::make_unique<Pipeline<Real>>(cfg, classes);
  restore_parameters(pipe->store(), ck);
  return pipe;
}

/// Top-1 accuracy of a saved checkpoint on a manifest, re-aggregated at
/// `frequency_hz` and selected in eval (argmax) mode.
inline double evaluate(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest,
                       double frequency_hz) {
  const auto pipe = load_pipeline(checkpoint);
  const DatasetManifest m = load_manifest(manifest);
  if (m.classes.size() != pipe->model_config().classes) {
    throw ArgumentError("manifest has " + std::to_string(m.classes.size()) + " classes, checkpoint " +
                        std::to_string(pipe->model_config().classes));
  }
  return accuracy(*pipe, load_samples(m), frequency_hz);
}

struct SweepConfig {
  std::vector<double> train_frequencies;
  std::vector<double> eval_frequencies;
  std::vector<Variant> variants{Variant::TimeWindows, Variant::EventCounts, Variant::EventCountsPeas};
  TrainConfig base;

  void validate() const {
    if (train_frequencies.empty() || eval_frequencies.empty() || variants.empty()) {
      throw ArgumentError("sweep: frequency lists and variants must be non-empty");
    }
    for (double f : train_frequencies)
      if (!(f > 0)) throw ArgumentError("sweep: frequencies must be positive");
    for (double f : eval_frequencies)
      if (!(f > 0)) throw ArgumentError("sweep: frequencies must be positive");
  }
};

inline SweepConfig sweep_from_json(const nlohmann::json& j) {
  SweepConfig s;
  detail::Reader r(j, "sweep");
  std::vector<std::string> variants;
  r.get("train_frequencies", s.train_frequencies).get("eval_frequencies", s.eval_frequencies).get("variants", variants);
  if (const auto* b = r.child("base")) s.base = config_from_json(*b);
  r.finish();
  if (!variants.empty()) {
    s.variants.clear();
    for (const auto& v : variants) s.variants.push_back(variant_from(v));
  }
  s.validate();
  return s;
}

struct SweepRow {
  Variant variant = Variant::EventCountsPeas;
  double train_f = 0;
  double eval_f = 0;
  double top1 = std::numeric_limits<double>::quiet_NaN();
  double drop = std::numeric_limits<double>::quiet_NaN();  // diagonal top1 minus this cell's
  std::string error;
};

/// Trains one model per (variant, train frequency) and evaluates it on every
/// eval frequency. A failing cell is reported through `error` and the sweep
/// moves on.
inline std::vector<SweepRow> sweep_frequency(const SweepConfig& sweep, const std::vector<LabelledStream>& train_set,
                                             const std::vector<LabelledStream>& eval_set, std::size_t classes,
                                             std::ostream* log = nullptr) {
  sweep.validate();
  std::vector<SweepRow> rows;
  for (Variant v : sweep.variants) {
    for (double tf : sweep.train_frequencies) {
      std::vector<SweepRow> cell;
      for (double ef : sweep.eval_frequencies) {
        SweepRow row;
        row.variant = v;
        row.train_f = tf;
        row.eval_f = ef;
        cell.push_back(row);
      }
      try {
        TrainConfig cfg = sweep.base;
        cfg.set_variant(v);
        cfg.sampling.frequency_hz = tf;
        if (log) *log << "== " << to_string(v) << " train " << tf << " Hz\n";
        Pipeline<Real> pipe(cfg, classes);
        fit(pipe, train_set, log);
        const double diag = accuracy(pipe, eval_set, tf);
        for (auto& row : cell) {
          try {
            row.top1 = row.eval_f == tf ? diag : accuracy(pipe, eval_set, row.eval_f);
            row.drop = diag - row.top1;
          } catch (const Error& e) {
            row.error = e.what();
          }
          if (log) *log << "   eval " << row.eval_f << " Hz top1 " << row.top1 << '\n';
        }
      } catch (const Error& e) {
        for (auto& row : cell) row.error = e.what();
        if (log) *log << "   cell failed: " << e.what() << '\n';
      }
      rows.insert(rows.end(), cell.begin(), cell.end());
    }
  }
  return rows;
}

/// Largest drop of a variant over all its cells; NaN when none succeeded.
inline double max_drop(const std::vector<SweepRow>& rows, Variant v) {
  double best = std::numeric_limits<double>::quiet_NaN();
  for (const auto& r : rows) {
    if (r.variant != v || !std::isfinite(r.drop)) continue;
    best = std::isfinite(best) ? std::max(best, r.drop) : r.drop;
  }
  return best;
}

inline void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << "variant,train_f,eval_f,top1,drop\n";
  out << std::setprecision(9);
  for (const auto& r : rows) {
    out << to_string(r.variant) << ',' << r.train_f << ',' << r.eval_f << ',';
    if (std::isfinite(r.top1)) out << r.top1;
    out << ',';
    if (std::isfinite(r.drop)) out << r.drop;
    out << '\n';
  }
}

/// Selected frames and loss breakdown for one sample, in eval mode at the
/// checkpoint's training frequency.
template <typename T>
nlohmann::json inspect(const Pipeline<T>& pipe, const EventStream& stream, std::size_t label) {
  const EventFrameStack st = pipe.stack(stream, pipe.config().sampling.frequency_hz);
  ad::NoGradScope<T> off;
  const StepResult<T> r = pipe.run(st, label, peas::MaskMode::Eval, {});
  nlohmann::json j;
  if (r.selection.mask) {
    j = peas::inspection_record(*r.selection.mask, r.selection.scores, st.original_count, st.pad_count);
  } else {
    j = {{"selected_indices", r.selection.indices}, {"Ori", st.original_count}, {"Pad", st.pad_count}};
  }
  const msg::LossBreakdown lb = r.breakdown();
  const auto hard_weie = msg::weie(r.selection.frames, pipe.config().histogram, msg::Binning::Hard).item();
  const auto hard_iemi = msg::iemi(r.selection.frames, pipe.config().histogram, msg::Binning::Hard).item();
  j["variant"] = to_string(pipe.config().variant());
  j["frequency_hz"] = pipe.config().sampling.frequency_hz;
  j["label"] = label;
  j["predicted"] = r.predicted();
  j["logits"] = std::vector<double>(r.logits.data().begin(), r.logits.data().end());
  j["loss"] = {{"weie", lb.weie}, {"iemi", lb.iemi}, {"ms", lb.ms}, {"cls", lb.cls}, {"total", lb.total},
               {"weie_hard", hard_weie}, {"iemi_hard", hard_iemi}};
  return j;
}

}  // namespace pastssm::train
