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

#include <cmath>
#include <cstdint>
#include <span>

namespace pastssm {

/// Neumaier-compensated accumulator. Result is independent of summation
/// order to within a few ulps of the largest partial sum.
template <typename T>
class CompensatedSum {
 public:
  void add(T x) noexcept {
    const T t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  T value() const noexcept { return sum_ + comp_; }

 private:
  T sum_{0};
  T comp_{0};
};

template <typename T>
T compensated_sum(std::span<const T> xs) {
  CompensatedSum<T> acc;
  for (T x : xs) acc.add(x);
  return acc.value();
}

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Counter-based random stream: every draw is a pure function of
/// (key, counter), so results do not depend on evaluation order.
class CounterRng {
 public:
  constexpr CounterRng() = default;
  constexpr explicit CounterRng(std::uint64_t key) : key_(mix64(key)) {}

  /// Derive an independent stream for a sub-key.
  constexpr CounterRng fork(std::uint64_t sub) const noexcept {
    CounterRng r;
    r.key_ = mix64(key_ ^ mix64(sub + 0x632be59bd9b4e019ULL));
    return r;
  }

  constexpr std::uint64_t bits(std::uint64_t counter) const noexcept {
    return mix64(key_ + mix64(counter));
  }

  /// Uniform in the open interval (0, 1).
  double uniform_open(std::uint64_t counter) const noexcept {
    const std::uint64_t b = bits(counter) >> 11;
    return (static_cast<double>(b) + 0.5) * 0x1.0p-53;
  }

  /// Standard Gumbel(0, 1) draw.
  double gumbel(std::uint64_t counter) const noexcept {
    return -std::log(-std::log(uniform_open(counter)));
  }

 private:
  std::uint64_t key_ = 0;
};

/// Uniform double in [0, 1) from a 64-bit engine output.
template <typename Engine>
double uniform01(Engine& eng) {
  return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

inline double softplus(double x) noexcept {
  return x > 20.0 ? x : std::log1p(std::exp(x));
}

inline double sigmoid(double x) noexcept { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace pastssm
