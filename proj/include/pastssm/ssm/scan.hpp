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
#include <span>
#include <string>
#include <vector>

#include "pastssm/error.hpp"
#include "pastssm/ssm/discretize.hpp"

namespace pastssm::ssm {

/// Inputs of a diagonal selective scan, all row-major.
///   u     [length, channels]   scanned input
///   delta [length, channels]   positive step sizes
///   a     [channels, state]    continuous diagonal (strictly negative)
///   b, c  [length, state]      input-dependent input/output maps
///   d     [channels]           skip weights
template <typename T>
struct ScanView {
  std::size_t length = 0, channels = 0, state = 0;
  std::span<const T> u, delta, a, b, c, d;

  void validate() const {
    const auto want = [](std::span<const T> s, std::size_t n, const char* name) {
      if (s.size() != n) {
        throw ShapeError(std::string("selective_scan: ") + name + " has " + std::to_string(s.size()) +
                         " values, expected " + std::to_string(n));
      }
    };
    want(u, length * channels, "u");
    want(delta, length * channels, "delta");
    want(a, channels * state, "a");
    want(b, length * state, "b");
    want(c, length * state, "c");
    want(d, channels, "d");
  }
};

namespace detail {

/// Discretized coefficients of step t for every (channel, state) pair.
template <typename T>
void step_coefficients(const ScanView<T>& v, std::size_t t, std::vector<T>& a_bar, std::vector<T>& bu) {
  const std::size_t e_n = v.channels, n_s = v.state;
  a_bar.resize(e_n * n_s);
  bu.resize(e_n * n_s);
  for (std::size_t e = 0; e < e_n; ++e) {
    const T dt = v.delta[t * e_n + e];
    const T ut = v.u[t * e_n + e];
    for (std::size_t n = 0; n < n_s; ++n) {
      const auto [ab, bb] = discretize(v.a[e * n_s + n], v.b[t * n_s + n], dt);
      a_bar[e * n_s + n] = ab;
      bu[e * n_s + n] = bb * ut;
    }
  }
}

template <typename T>
void emit(const ScanView<T>& v, std::size_t t, std::span<const T> h, std::span<T> y) {
  const std::size_t e_n = v.channels, n_s = v.state;
  for (std::size_t e = 0; e < e_n; ++e) {
    T acc = 0;
    for (std::size_t n = 0; n < n_s; ++n) acc += v.c[t * n_s + n] * h[e * n_s + n];
    const T out = acc + v.d[e] * v.u[t * e_n + e];
    if (!std::isfinite(out)) {
      throw NumericError("selective_scan: non-finite output at step " + std::to_string(t));
    }
    y[t * e_n + e] = out;
  }
}

}  // namespace detail

/// h_t = a_bar_t * h_{t-1} + b_bar_t * u_t with h_{-1} = 0, y_t = <c_t, h_t> + d u_t.
/// When `states` is given it receives every h_t, [length, channels, state].
template <typename T>
std::vector<T> sequential_scan(const ScanView<T>& v, std::vector<T>* states = nullptr) {
  v.validate();
  const std::size_t width = v.channels * v.state;
  std::vector<T> y(v.length * v.channels);
  std::vector<T> h(width, T(0)), a_bar, bu;
  if (states) states->assign(v.length * width, T(0));
  for (std::size_t t = 0; t < v.length; ++t) {
    detail::step_coefficients(v, t, a_bar, bu);
    for (std::size_t i = 0; i < width; ++i) h[i] = a_bar[i] * h[i] + bu[i];
    detail::emit<T>(v, t, h, y);
    if (states) std::copy(h.begin(), h.end(), states->begin() + t * width);
  }
  return y;
}

/// Chunked evaluation of the same recurrence. Each chunk is first scanned
/// from a zero state while accumulating the product of its transition
/// factors; the true state is then local + product * carry. The local pass
/// of different chunks is independent.
template <typename T>
std::vector<T> blocked_scan(const ScanView<T>& v, std::size_t block) {
  if (block == 0) throw ArgumentError("blocked_scan: block must be at least 1");
  v.validate();
  const std::size_t width = v.channels * v.state;
  std::vector<T> y(v.length * v.channels);
  std::vector<T> local(v.length * width), prod(v.length * width);
  std::vector<T> a_bar, bu;
  for (std::size_t s = 0; s < v.length; s += block) {
    const std::size_t end = std::min(v.length, s + block);
    for (std::size_t t = s; t < end; ++t) {
      detail::step_coefficients(v, t, a_bar, bu);
      T* lt = &local[t * width];
      T* pt = &prod[t * width];
      if (t == s) {
        std::copy(bu.begin(), bu.end(), lt);
        std::copy(a_bar.begin(), a_bar.end(), pt);
      } else {
        const T* lp = lt - width;
        const T* pp = pt - width;
        for (std::size_t i = 0; i < width; ++i) {
          lt[i] = a_bar[i] * lp[i] + bu[i];
          pt[i] = a_bar[i] * pp[i];
        }
      }
    }
  }
  std::vector<T> carry(width, T(0)), h(width);
  for (std::size_t s = 0; s < v.length; s += block) {
    const std::size_t end = std::min(v.length, s + block);
    for (std::size_t t = s; t < end; ++t) {
      for (std::size_t i = 0; i < width; ++i) h[i] = prod[t * width + i] * carry[i] + local[t * width + i];
      detail::emit<T>(v, t, h, y);
      if (t + 1 == end) carry = h;
    }
  }
  return y;
}

}  // namespace pastssm::ssm
