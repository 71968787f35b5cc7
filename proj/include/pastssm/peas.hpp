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
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "pastssm/aggregation.hpp"
#include "pastssm/autodiff/ops.hpp"
#include "pastssm/autodiff/optim.hpp"
#include "pastssm/error.hpp"
#include "pastssm/numeric.hpp"

namespace pastssm::peas {

/// Frame stack as a tensor [P, H, W, 3].
template <typename T>
ad::Tensor<T> stack_tensor(const EventFrameStack& stack) {
  return ad::Tensor<T>({stack.total(), stack.height, stack.width, 3},
                       std::vector<T>(stack.frames.begin(), stack.frames.end()));
}

/// Two 3-D convolutions (3 -> hidden -> K channels, kernels 3x7x7, spatial
/// stride 4) with GELU between them and a spatial average at the end, giving
/// one score per (selected slot, candidate frame). Time is padded by
/// repeating the edge frames so that a stack of identical frames scores
/// every column identically.
template <typename T>
class ScorePredictor {
 public:
  static constexpr std::size_t kHidden = 16;

  ScorePredictor(ad::ParamStore<T>& store, std::size_t k, std::uint64_t seed, const std::string& prefix = "peas.")
      : k_(k) {
    if (k == 0) throw ArgumentError("score predictor: K must be positive");
    std::mt19937_64 rng(seed);
    const auto uniform = [&](std::size_t n, std::size_t fan_in) {
      std::uniform_real_distribution<double> dist(-1.0 / std::sqrt(double(fan_in)), 1.0 / std::sqrt(double(fan_in)));
      std::vector<T> v(n);
      for (T& x : v) x = static_cast<T>(dist(rng));
      return v;
    };
    const std::size_t taps = 3 * 7 * 7;
    w1_ = store.add(prefix + "conv1.weight", ad::Tensor<T>({kHidden, 3, 3, 7, 7}, uniform(kHidden * 3 * taps, 3 * taps)), true);
    b1_ = store.add(prefix + "conv1.bias", ad::Tensor<T>({kHidden}, uniform(kHidden, 3 * taps)), false);
    w2_ = store.add(prefix + "conv2.weight", ad::Tensor<T>({k, kHidden, 3, 7, 7}, uniform(k * kHidden * taps, kHidden * taps)), true);
    b2_ = store.add(prefix + "conv2.bias", ad::Tensor<T>({k}, uniform(k, kHidden * taps)), false);
  }

  std::size_t k() const noexcept { return k_; }

  /// frames [P, H, W, 3] -> scores [K, P]
  ad::Tensor<T> operator()(const ad::Tensor<T>& frames) const {
    if (frames.rank() != 4 || frames.dim(3) != 3) {
      throw ShapeError("predict_scores: expected [P,H,W,3], got " + ad::to_string(frames.shape()));
    }
    if (frames.dim(0) < k_) {
      throw SelectionError("predict_scores: " + std::to_string(frames.dim(0)) + " frames cannot supply " +
                           std::to_string(k_) + " selections");
    }
    const ad::Conv3dSpec spec{{1, 4, 4}, {1, 3, 3}, true};
    const ad::Tensor<T> h = ad::gelu(ad::conv3d(ad::channels_first(frames), w1_, b1_, spec));
    return ad::spatial_mean(ad::conv3d(h, w2_, b2_, spec));
  }

 private:
  std::size_t k_;
  ad::Tensor<T> w1_, b1_, w2_, b2_;
};

enum class MaskMode { Train, Eval };

/// Identifies the Gumbel noise of one sample; the draw for (row, column) is
/// a pure function of the key, so the order samples are processed in does
/// not matter.
struct NoiseKey {
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  std::uint64_t sample = 0;

  double gumbel(std::size_t row, std::size_t col) const {
    return CounterRng(seed).fork(epoch).fork(sample).fork(row).gumbel(col);
  }
};

template <typename T>
struct SelectionMask {
  ad::Tensor<T> mask;                // [K, P], row one-hot, rows sorted by index
  std::vector<std::size_t> indices;  // selected column of each row
  MaskMode mode = MaskMode::Eval;
};

/// Lowest index of the row maximum.
template <typename T>
std::size_t row_argmax(std::span<const T> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

/// Train: straight-through Gumbel-softmax per row (hard forward, soft
/// gradient). Eval: one-hot at each row's argmax. Rows are then stably
/// reordered so the selected frame indices ascend.
template <typename T>
SelectionMask<T> make_mask(const ad::Tensor<T>& scores, MaskMode mode, T tau = T(1), const NoiseKey& key = {}) {
  if (scores.rank() != 2) throw ShapeError("make_mask: expected [K,P], got " + ad::to_string(scores.shape()));
  for (T v : scores.data()) {
    if (!std::isfinite(v)) throw NumericError("make_mask: non-finite score");
  }
  const std::size_t k = scores.dim(0), p = scores.dim(1);
  ad::Tensor<T> hard;
  if (mode == MaskMode::Train) {
    std::vector<T> noise(k * p);
    for (std::size_t r = 0; r < k; ++r)
      for (std::size_t c = 0; c < p; ++c) noise[r * p + c] = static_cast<T>(key.gumbel(r, c));
    hard = ad::gumbel_softmax_st<T>(scores, noise, tau);
  } else {
    hard = ad::Tensor<T>({k, p});
    auto h = hard.mutable_data();
    for (std::size_t r = 0; r < k; ++r) h[r * p + row_argmax<T>(scores.data().subspan(r * p, p))] = T(1);
  }
  std::vector<std::size_t> picked(k);
  for (std::size_t r = 0; r < k; ++r) picked[r] = row_argmax<T>(hard.data().subspan(r * p, p));
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return picked[a] < picked[b]; });
  SelectionMask<T> out;
  out.mode = mode;
  out.mask = ad::permute_rows(hard, order);
  for (std::size_t r : order) out.indices.push_back(picked[r]);
  return out;
}

/// F'[k] = sum_p M[k, p] F[p]; frames [P, H, W, 3] -> [K, H, W, 3].
template <typename T>
ad::Tensor<T> apply_selection(const ad::Tensor<T>& mask, const ad::Tensor<T>& frames) {
  if (frames.rank() != 4 || mask.rank() != 2 || mask.dim(1) != frames.dim(0)) {
    throw ShapeError("apply_selection: mask " + ad::to_string(mask.shape()) + " vs frames " +
                     ad::to_string(frames.shape()));
  }
  const std::size_t p = frames.dim(0), h = frames.dim(1), w = frames.dim(2), c = frames.dim(3);
  const ad::Tensor<T> flat = ad::reshape(frames, {p, h * w * c});
  return ad::reshape(ad::gather_contract(mask, flat), {mask.dim(0), h, w, c});
}

struct ScanIndex {
  std::size_t frame, row, col;
  bool operator==(const ScanIndex&) const = default;
};

enum class ScanDirection { Forward, Backward };

/// Token visiting order: frame by frame, each frame row by row, left to
/// right; Backward is the exact reversal.
inline std::vector<ScanIndex> scan_order(std::size_t k, std::size_t h, std::size_t w, ScanDirection dir) {
  if (k == 0 || h == 0 || w == 0) throw ArgumentError("scan_order: K, h and w must be positive");
  std::vector<ScanIndex> out;
  out.reserve(k * h * w);
  for (std::size_t f = 0; f < k; ++f)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) out.push_back({f, r, c});
  if (dir == ScanDirection::Backward) std::reverse(out.begin(), out.end());
  return out;
}

/// Per-sample record of a selection for qualitative inspection.
template <typename T>
nlohmann::json inspection_record(const SelectionMask<T>& sel, const ad::Tensor<T>& scores, std::size_t ori,
                                 std::size_t pad) {
  const std::size_t k = scores.dim(0), p = scores.dim(1);
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t r = 0; r < k; ++r) {
    const auto row = scores.data().subspan(r * p, p);
    const auto [lo, hi] = std::minmax_element(row.begin(), row.end());
    const double mean = std::accumulate(row.begin(), row.end(), 0.0) / double(p);
    rows.push_back({{"min", *lo}, {"max", *hi}, {"mean", mean}, {"argmax", row_argmax<T>(row)}});
  }
  std::size_t in_padding = 0;
  for (std::size_t i : sel.indices) in_padding += i >= ori;
  return {{"selected_indices", sel.indices},
          {"Ori", ori},
          {"Pad", pad},
          {"selected_in_padding", in_padding},
          {"scores_summary", rows}};
}

}  // namespace pastssm::peas
