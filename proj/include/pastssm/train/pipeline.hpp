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
#include <optional>
#include <string>
#include <vector>

#include "pastssm/aggregation.hpp"
#include "pastssm/autodiff/optim.hpp"
#include "pastssm/msg_loss.hpp"
#include "pastssm/numeric.hpp"
#include "pastssm/peas.hpp"
#include "pastssm/ssm/model.hpp"
#include "pastssm/train/config.hpp"

namespace pastssm::train {

/// Random shift (zero fill) and horizontal mirror applied to every frame of
/// a stack alike. Draws come from `rng`, so the result is a pure function of
/// the key.
inline void augment_stack(EventFrameStack& st, const AugmentConfig& cfg, const CounterRng& rng) {
  const std::size_t h = st.height, w = st.width, fs = st.frame_size();
  long dy = 0, dx = 0;
  if (cfg.random_crop && cfg.crop_padding > 0) {
    const auto range = 2 * cfg.crop_padding + 1;
    dy = static_cast<long>(rng.bits(0) % range) - static_cast<long>(cfg.crop_padding);
    dx = static_cast<long>(rng.bits(1) % range) - static_cast<long>(cfg.crop_padding);
  }
  const bool flip = cfg.horizontal_flip && (rng.bits(2) & 1);
  if (dy == 0 && dx == 0 && !flip) return;
  std::vector<float> out(st.frames.size(), 0.0f);
  for (std::size_t p = 0; p < st.total(); ++p) {
    for (std::size_t r = 0; r < h; ++r) {
      const long sr = static_cast<long>(r) + dy;
      if (sr < 0 || sr >= static_cast<long>(h)) continue;
      for (std::size_t c = 0; c < w; ++c) {
        const long cc = flip ? static_cast<long>(w - 1 - c) : static_cast<long>(c);
        const long sc = cc + dx;
        if (sc < 0 || sc >= static_cast<long>(w)) continue;
        const float* src = &st.frames[p * fs + (static_cast<std::size_t>(sr) * w + static_cast<std::size_t>(sc)) * 3];
        std::copy(src, src + 3, &out[p * fs + (r * w + c) * 3]);
      }
    }
  }
  st.frames = std::move(out);
}

/// First index of the K-frame window centred on the original frames.
inline std::size_t centre_start(std::size_t ori, std::size_t k) { return ori > k ? (ori - k) / 2 : 0; }

template <typename T>
struct Selection {
  ad::Tensor<T> frames;  // [K, H, W, 3]
  std::vector<std::size_t> indices;
  std::optional<peas::SelectionMask<T>> mask;
  ad::Tensor<T> scores;  // [K, P] when the selector is learned
};

template <typename T>
struct StepResult {
  Selection<T> selection;
  ad::Tensor<T> weie, iemi, ms;
  msg::Objective<T> objective;
  ad::Tensor<T> logits;

  msg::LossBreakdown breakdown() const {
    return {weie.item(), iemi.item(), ms.item(), objective.cls.item(), objective.total.item()};
  }
  std::size_t predicted() const { return peas::row_argmax<T>(logits.data()); }
};

/// Classifier plus frame selector sharing one parameter store. With PEAS
/// the K frames come from the learned selection; otherwise they are the K
/// consecutive frames centred in the stack.
template <typename T>
class Pipeline {
 public:
  Pipeline(const TrainConfig& cfg, std::size_t classes)
      : cfg_(cfg),
        model_cfg_(cfg.model.resolve(classes, cfg.frames_k, cfg.sampling.height, cfg.sampling.width)),
        model_(store_, model_cfg_, mix64(cfg.seed)) {
    cfg_.validate();
    if (cfg_.use_peas) predictor_.emplace(store_, cfg_.frames_k, mix64(cfg_.seed ^ 0x70656173ULL));
  }
  Pipeline(const Pipeline&) = delete;
  Pipeline& operator=(const Pipeline&) = delete;

  const TrainConfig& config() const noexcept { return cfg_; }
  const ssm::ModelConfig& model_config() const noexcept { return model_cfg_; }
  ad::ParamStore<T>& store() noexcept { return store_; }
  const ad::ParamStore<T>& store() const noexcept { return store_; }
  const ssm::Classifier<T>& model() const noexcept { return model_; }

  /// Aggregates `stream` at `frequency_hz` with the configured sampling.
  /// PEAS stacks are padded up to K frames when the stream is short.
  EventFrameStack stack(const EventStream& stream, double frequency_hz) const {
    SamplingConfig s = cfg_.sampling;
    s.frequency_hz = frequency_hz;
    EventFrameStack st = build_stack(stream, s);
    if (st.total() == 0) throw EmptyStreamError("stream yields no frames");
    if (cfg_.use_peas && st.total() < cfg_.frames_k) pad_stack(st, cfg_.frames_k);
    return st;
  }

  Selection<T> select(const EventFrameStack& st, peas::MaskMode mode, const peas::NoiseKey& key) const {
    Selection<T> sel;
    const ad::Tensor<T> frames = peas::stack_tensor<T>(st);
    const std::size_t k = cfg_.frames_k;
    if (predictor_) {
      sel.scores = (*predictor_)(frames);
      sel.mask = peas::make_mask<T>(sel.scores, mode, static_cast<T>(cfg_.tau), key);
      sel.indices = sel.mask->indices;
      sel.frames = peas::apply_selection(sel.mask->mask, frames);
      return sel;
    }
    const std::size_t fs = st.frame_size();
    const std::size_t start = centre_start(st.original_count, k);
    const std::size_t take = std::min(k, st.original_count);
    std::vector<T> v(k * fs, T(0));
    for (std::size_t i = 0; i < take; ++i) {
      sel.indices.push_back(start + i);
      const auto f = st.frame(start + i);
      std::copy(f.begin(), f.end(), v.begin() + static_cast<std::ptrdiff_t>(i * fs));
    }
    sel.frames = ad::Tensor<T>({k, st.height, st.width, 3}, std::move(v));
    return sel;
  }

  /// Selection, losses and logits for one stack. Records on the active tape.
  StepResult<T> run(const EventFrameStack& st, std::size_t label, peas::MaskMode mode, const peas::NoiseKey& key,
                    msg::Binning binning = msg::Binning::Soft) const {
    StepResult<T> r;
    r.selection = select(st, mode, key);
    r.weie = msg::weie(r.selection.frames, cfg_.histogram, binning);
    r.iemi = msg::iemi(r.selection.frames, cfg_.histogram, binning);
    r.ms = r.selection.mask ? msg::ms_loss(r.selection.mask->mask, st.original_count, st.pad_count)
                            : ad::Tensor<T>::scalar(T(0));
    r.logits = model_.forward(r.selection.frames);
    r.objective = msg::total_loss(r.weie, r.iemi, r.ms, r.logits, label);
    return r;
  }

  /// Eval-mode class prediction, no gradient recording.
  std::size_t predict(const EventFrameStack& st) const {
    ad::NoGradScope<T> off;
    const Selection<T> sel = select(st, peas::MaskMode::Eval, {});
    return peas::row_argmax<T>(model_.forward(sel.frames).data());
  }

 private:
  TrainConfig cfg_;
  ssm::ModelConfig model_cfg_;
  ad::ParamStore<T> store_;
  ssm::Classifier<T> model_;
  std::optional<peas::ScorePredictor<T>> predictor_;
};

}  // namespace pastssm::train
