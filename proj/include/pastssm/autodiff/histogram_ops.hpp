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
#include <tuple>
#include <utility>
#include <vector>

#include "pastssm/autodiff/tensor.hpp"

namespace pastssm::ad {

/// Triangular-kernel soft assignment of a value in [0, 1] to `bins` equal
/// bins. The value sits at u = v * bins - 0.5 in bin-center coordinates; the
/// weight of bin i is the kernel mass over [i - 0.5, i + 0.5], with the two
/// outer bins extended to infinity so weights always sum to one. As the
/// bandwidth shrinks the assignment tends to the hard bin min(floor(v * bins),
/// bins - 1).
template <typename T>
class SoftBinner {
 public:
  SoftBinner(std::size_t bins, T bandwidth) : bins_(bins), bw_(bandwidth) {
    if (bins < 2) throw ArgumentError("soft histogram: need at least 2 bins");
    if (!(bandwidth > 0)) throw DomainError("soft histogram: bandwidth must be positive");
  }

  std::size_t bins() const noexcept { return bins_; }
  T bandwidth() const noexcept { return bw_; }

  /// Range of bins [first, last] with possibly non-zero weight for value v.
  std::pair<std::size_t, std::size_t> support(T v) const {
    const T u = v * static_cast<T>(bins_) - T(0.5);
    const T lo = std::floor(u - bw_ - T(0.5));
    const T hi = std::ceil(u + bw_ + T(0.5));
    const auto clampi = [&](T x) {
      return static_cast<std::size_t>(std::clamp<T>(x, T(0), static_cast<T>(bins_ - 1)));
    };
    return {clampi(lo), clampi(hi)};
  }

  /// Weight of bin i and its derivative with respect to v.
  std::pair<T, T> weight(std::size_t i, T v) const {
    const T u = v * static_cast<T>(bins_) - T(0.5);
    const T c = static_cast<T>(i);
    const bool first = i == 0;
    const bool last = i + 1 == bins_;
    const T upper = last ? T(1) : cdf(c + T(0.5) - u);
    const T lower = first ? T(0) : cdf(c - T(0.5) - u);
    const T d_upper = last ? T(0) : -pdf(c + T(0.5) - u);
    const T d_lower = first ? T(0) : -pdf(c - T(0.5) - u);
    return {upper - lower, (d_upper - d_lower) * static_cast<T>(bins_)};
  }

  std::size_t hard_bin(T v) const {
    const T u = std::floor(v * static_cast<T>(bins_));
    return static_cast<std::size_t>(std::clamp<T>(u, T(0), static_cast<T>(bins_ - 1)));
  }

 private:
  T pdf(T s) const {
    const T a = std::abs(s);
    return a >= bw_ ? T(0) : (bw_ - a) / (bw_ * bw_);
  }
  T cdf(T s) const {
    if (s <= -bw_) return T(0);
    if (s >= bw_) return T(1);
    const T r = (bw_ - std::abs(s)) / bw_;
    return s < 0 ? T(0.5) * r * r : T(1) - T(0.5) * r * r;
  }

  std::size_t bins_;
  T bw_;
};

/// Per-row normalized soft histogram: x [R, M] -> [R, bins], each row sums
/// to one.
template <typename T>
Tensor<T> soft_histogram(const Tensor<T>& x, const SoftBinner<T>& binner) {
  if (x.rank() != 2) throw ShapeError("soft_histogram: expected rank 2, got " + to_string(x.shape()));
  const std::size_t r = x.dim(0), m = x.dim(1), nb = binner.bins();
  Tensor<T> out({r, nb});
  auto o = out.mutable_data();
  const T inv = T(1) / static_cast<T>(m);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const T v = x[i * m + j];
      const auto [b0, b1] = binner.support(v);
      for (std::size_t b = b0; b <= b1; ++b) o[i * nb + b] += binner.weight(b, v).first * inv;
    }
  detail::record<T>("soft_histogram", out, {&x}, [x, binner, r, m, nb, inv](std::span<const T> g) {
    std::vector<T> gx(x.size(), T(0));
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        const T v = x[i * m + j];
        const auto [b0, b1] = binner.support(v);
        T acc = 0;
        for (std::size_t b = b0; b <= b1; ++b) acc += g[i * nb + b] * binner.weight(b, v).second;
        gx[i * m + j] = acc * inv;
      }
    detail::push_grad<T>(x, gx);
  });
  return out;
}

/// Normalized joint soft histogram of pixel-aligned pairs: a [M], b [M] ->
/// [bins, bins] with entry (i, j) the mass of pairs whose first value falls
/// in bin i and second in bin j.
template <typename T>
Tensor<T> joint_soft_histogram(const Tensor<T>& a, const Tensor<T>& b, const SoftBinner<T>& binner) {
  if (a.size() != b.size()) {
    throw ShapeError("joint_soft_histogram: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  const std::size_t m = a.size(), nb = binner.bins();
  const T inv = T(1) / static_cast<T>(m);
  Tensor<T> out({nb, nb});
  auto o = out.mutable_data();
  for (std::size_t p = 0; p < m; ++p) {
    const auto [i0, i1] = binner.support(a[p]);
    const auto [j0, j1] = binner.support(b[p]);
    for (std::size_t i = i0; i <= i1; ++i) {
      const T wi = binner.weight(i, a[p]).first * inv;
      if (wi == T(0)) continue;
      for (std::size_t j = j0; j <= j1; ++j) o[i * nb + j] += wi * binner.weight(j, b[p]).first;
    }
  }
  detail::record<T>("joint_soft_histogram", out, {&a, &b}, [a, b, binner, m, nb, inv](std::span<const T> g) {
    std::vector<T> ga(m, T(0)), gb(m, T(0));
    std::vector<T> wb, db;
    for (std::size_t p = 0; p < m; ++p) {
      const auto [i0, i1] = binner.support(a[p]);
      const auto [j0, j1] = binner.support(b[p]);
      wb.resize(j1 - j0 + 1);
      db.resize(j1 - j0 + 1);
      for (std::size_t j = j0; j <= j1; ++j) std::tie(wb[j - j0], db[j - j0]) = binner.weight(j, b[p]);
      T acc_a = 0, acc_b = 0;
      for (std::size_t i = i0; i <= i1; ++i) {
        const auto [wi, di] = binner.weight(i, a[p]);
        for (std::size_t j = j0; j <= j1; ++j) {
          const T gij = g[i * nb + j];
          acc_a += gij * di * wb[j - j0];
          acc_b += gij * wi * db[j - j0];
        }
      }
      ga[p] = acc_a * inv;
      gb[p] = acc_b * inv;
    }
    detail::push_grad<T>(a, ga);
    detail::push_grad<T>(b, gb);
  });
  return out;
}

/// Shannon entropy (natural log) of each row of a probability table
/// [R, bins] -> [R]. Empty cells contribute nothing.
template <typename T>
Tensor<T> row_entropy(const Tensor<T>& p) {
  if (p.rank() != 2) throw ShapeError("row_entropy: expected rank 2, got " + to_string(p.shape()));
  const std::size_t r = p.dim(0), c = p.dim(1);
  Tensor<T> out({r});
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < r; ++i) {
    T h = 0;
    for (std::size_t j = 0; j < c; ++j) {
      const T v = p[i * c + j];
      if (v > T(0)) h -= v * std::log(v);
    }
    o[i] = h;
  }
  detail::record<T>("row_entropy", out, {&p}, [p, r, c](std::span<const T> g) {
    std::vector<T> gp(p.size(), T(0));
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        const T v = p[i * c + j];
        if (v > T(0)) gp[i * c + j] = -g[i] * (std::log(v) + T(1));
      }
    detail::push_grad<T>(p, gp);
  });
  return out;
}

/// Mutual information (natural log) of a joint probability table
/// [bins_a, bins_b], with marginals taken from the table itself.
template <typename T>
Tensor<T> mutual_information(const Tensor<T>& joint) {
  if (joint.rank() != 2) {
    throw ShapeError("mutual_information: expected rank 2, got " + to_string(joint.shape()));
  }
  const std::size_t na = joint.dim(0), nb = joint.dim(1);
  std::vector<T> pa(na, T(0)), pb(nb, T(0));
  for (std::size_t i = 0; i < na; ++i)
    for (std::size_t j = 0; j < nb; ++j) {
      pa[i] += joint[i * nb + j];
      pb[j] += joint[i * nb + j];
    }
  T mi = 0;
  for (std::size_t i = 0; i < na; ++i)
    for (std::size_t j = 0; j < nb; ++j) {
      const T v = joint[i * nb + j];
      if (v > T(0)) mi += v * std::log(v / (pa[i] * pb[j]));
    }
  Tensor<T> out = Tensor<T>::scalar(mi);
  detail::record<T>("mutual_information", out, {&joint},
                    [joint, pa = std::move(pa), pb = std::move(pb), na, nb](std::span<const T> g) {
                      std::vector<T> gj(joint.size(), T(0));
                      for (std::size_t i = 0; i < na; ++i)
                        for (std::size_t j = 0; j < nb; ++j) {
                          const T v = joint[i * nb + j];
                          if (v > T(0)) {
                            gj[i * nb + j] =
                                g[0] * (std::log(v) - std::log(pa[i]) - std::log(pb[j]) - T(1));
                          }
                        }
                      detail::push_grad<T>(joint, gj);
                    });
  return out;
}

}  // namespace pastssm::ad
