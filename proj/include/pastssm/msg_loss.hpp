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
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "pastssm/autodiff/histogram_ops.hpp"
#include "pastssm/autodiff/ops.hpp"
#include "pastssm/error.hpp"
#include "pastssm/numeric.hpp"

/// Selection-guiding losses: per-frame grayscale entropy, mutual
/// information between consecutive coordinate-weighted frames, and the
/// padding-mass penalty.
namespace pastssm::msg {

struct HistogramConfig {
  std::size_t bins = 256;
  double bandwidth = 1.0;     // soft-binning kernel half-width, in bins
  double coord_weight = 0.5;  // multiplier on (C_x + C_y)

  void validate() const {
    if (bins < 2) throw ArgumentError("histogram: need at least 2 bins");
    if (!(bandwidth > 0)) throw DomainError("histogram: bandwidth must be positive");
  }
};

/// Soft histograms carry gradients; hard histograms give the reported values.
enum class Binning { Soft, Hard };

/// Normalized coordinate map C_x + C_y for an H x W grid, with
/// C_x[r][c] = c / (W - 1) and C_y[r][c] = r / (H - 1) (0 for a unit extent).
inline std::vector<double> coordinate_sum(std::size_t h, std::size_t w) {
  std::vector<double> m(h * w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const double cx = w > 1 ? double(c) / double(w - 1) : 0.0;
      const double cy = h > 1 ? double(r) / double(h - 1) : 0.0;
      m[r * w + c] = cx + cy;
    }
  return m;
}

/// Hard-binned normalized histogram of `values` (each in [0, 1]).
inline std::vector<double> hard_histogram(std::span<const double> values, std::size_t bins) {
  std::vector<double> hist(bins, 0.0);
  for (double v : values) {
    const double b = std::floor(v * double(bins));
    hist[static_cast<std::size_t>(std::clamp(b, 0.0, double(bins - 1)))] += 1.0;
  }
  for (double& h : hist) h /= double(values.size());
  return hist;
}

inline std::vector<double> hard_joint_histogram(std::span<const double> a, std::span<const double> b, std::size_t bins) {
  std::vector<double> joint(bins * bins, 0.0);
  const auto bin = [bins](double v) {
    return static_cast<std::size_t>(std::clamp(std::floor(v * double(bins)), 0.0, double(bins - 1)));
  };
  for (std::size_t i = 0; i < a.size(); ++i) joint[bin(a[i]) * bins + bin(b[i])] += 1.0;
  for (double& j : joint) j /= double(a.size());
  return joint;
}

namespace detail {

template <typename T>
void expect_frames(std::string_view op, const ad::Tensor<T>& frames) {
  if (frames.rank() != 4 || frames.dim(3) != 3 || frames.dim(0) == 0) {
    throw ShapeError(std::string(op) + ": expected [K,H,W,3] with K >= 1, got " + ad::to_string(frames.shape()));
  }
}

template <typename T>
std::vector<double> row(const ad::Tensor<T>& x, std::size_t r) {
  const std::size_t c = x.dim(1);
  return std::vector<double>(x.data().begin() + r * c, x.data().begin() + (r + 1) * c);
}

}  // namespace detail

/// Mean over frames of the natural-log entropy of the grayscale histogram.
template <typename T>
ad::Tensor<T> weie(const ad::Tensor<T>& frames, const HistogramConfig& cfg, Binning binning) {
  cfg.validate();
  detail::expect_frames("weie", frames);
  const std::size_t k = frames.dim(0);
  const ad::Tensor<T> g = ad::gray(frames);
  if (binning == Binning::Soft) {
    const ad::SoftBinner<T> binner(cfg.bins, static_cast<T>(cfg.bandwidth));
    return ad::mean(ad::row_entropy(ad::soft_histogram(g, binner)));
  }
  CompensatedSum<double> acc;
  for (std::size_t r = 0; r < k; ++r) {
    const auto hist = hard_histogram(detail::row(g, r), cfg.bins);
    double h = 0;
    for (double p : hist)
      if (p > 0) h -= p * std::log(p);
    acc.add(h);
  }
  return ad::Tensor<T>::scalar(static_cast<T>(acc.value() / double(k)));
}

/// Mean over consecutive frame pairs of the mutual information between
/// clamp(gray + w (C_x + C_y), 0, 1) images; 0 for a single frame.
template <typename T>
ad::Tensor<T> iemi(const ad::Tensor<T>& frames, const HistogramConfig& cfg, Binning binning) {
  cfg.validate();
  detail::expect_frames("iemi", frames);
  const std::size_t k = frames.dim(0), h = frames.dim(1), w = frames.dim(2), hw = h * w;
  if (k == 1) return ad::Tensor<T>::scalar(T(0));
  std::vector<T> offset(k * hw);
  const auto coords = coordinate_sum(h, w);
  for (std::size_t f = 0; f < k; ++f)
    for (std::size_t i = 0; i < hw; ++i) offset[f * hw + i] = static_cast<T>(cfg.coord_weight * coords[i]);
  const ad::Tensor<T> g = ad::clamp(ad::add(ad::gray(frames), ad::Tensor<T>({k, hw}, std::move(offset))), T(0), T(1));
  if (binning == Binning::Soft) {
    const ad::SoftBinner<T> binner(cfg.bins, static_cast<T>(cfg.bandwidth));
    ad::Tensor<T> total = ad::mutual_information(
        ad::joint_soft_histogram(ad::slice_rows(g, 0, 1), ad::slice_rows(g, 1, 2), binner));
    for (std::size_t f = 1; f + 1 < k; ++f) {
      total = ad::add(total, ad::mutual_information(ad::joint_soft_histogram(ad::slice_rows(g, f, f + 1),
                                                                              ad::slice_rows(g, f + 1, f + 2), binner)));
    }
    return ad::scale(total, T(1) / static_cast<T>(k - 1));
  }
  CompensatedSum<double> acc;
  for (std::size_t f = 0; f + 1 < k; ++f) {
    const auto a = detail::row(g, f), b = detail::row(g, f + 1);
    const auto joint = hard_joint_histogram(a, b, cfg.bins);
    std::vector<double> pa(cfg.bins, 0.0), pb(cfg.bins, 0.0);
    for (std::size_t i = 0; i < cfg.bins; ++i)
      for (std::size_t j = 0; j < cfg.bins; ++j) {
        pa[i] += joint[i * cfg.bins + j];
        pb[j] += joint[i * cfg.bins + j];
      }
    double mi = 0;
    for (std::size_t i = 0; i < cfg.bins; ++i)
      for (std::size_t j = 0; j < cfg.bins; ++j) {
        const double pj = joint[i * cfg.bins + j];
        if (pj > 0) mi += pj * std::log(pj / (pa[i] * pb[j]));
      }
    acc.add(mi);
  }
  return ad::Tensor<T>::scalar(static_cast<T>(acc.value() / double(k - 1)));
}

/// Mask mass on the padded columns [ori, ori + pad), divided by K * pad;
/// 0 when there is no padding.
template <typename T>
ad::Tensor<T> ms_loss(const ad::Tensor<T>& mask, std::size_t ori, std::size_t pad) {
  if (mask.rank() != 2 || mask.dim(1) != ori + pad) {
    throw ShapeError("ms_loss: mask " + ad::to_string(mask.shape()) + " does not cover " + std::to_string(ori) +
                     " + " + std::to_string(pad) + " frames");
  }
  if (pad == 0) return ad::Tensor<T>::scalar(T(0));
  return ad::scale(ad::sum(ad::slice_cols(mask, ori, ori + pad)), T(1) / static_cast<T>(mask.dim(0) * pad));
}

struct LossBreakdown {
  double weie = 0, iemi = 0, ms = 0, cls = 0, total = 0;
};

/// Combined objective iemi - weie + ms + cls, with cls the cross-entropy of
/// the logits against `label`.
template <typename T>
struct Objective {
  ad::Tensor<T> cls;
  ad::Tensor<T> total;
};

template <typename T>
Objective<T> total_loss(const ad::Tensor<T>& weie_term, const ad::Tensor<T>& iemi_term, const ad::Tensor<T>& ms_term,
                        const ad::Tensor<T>& logits, std::size_t label) {
  for (T v : logits.data()) {
    if (!std::isfinite(v)) throw NumericError("total_loss: non-finite logits");
  }
  Objective<T> out;
  out.cls = ad::cross_entropy(logits, label);
  out.total = ad::add(ad::add(ad::sub(iemi_term, weie_term), ms_term), out.cls);
  return out;
}

inline LossBreakdown total_loss(double weie, double iemi, double ms, std::span<const double> logits, std::size_t label) {
  const ad::Tensor<double> z({logits.size()}, std::vector<double>(logits.begin(), logits.end()));
  const auto obj = total_loss<double>(ad::Tensor<double>::scalar(weie), ad::Tensor<double>::scalar(iemi),
                                      ad::Tensor<double>::scalar(ms), z, label);
  return {weie, iemi, ms, obj.cls.item(), obj.total.item()};
}

}  // namespace pastssm::msg
