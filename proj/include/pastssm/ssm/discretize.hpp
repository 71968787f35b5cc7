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
#include <span>
#include <string>
#include <vector>

#include "pastssm/error.hpp"

namespace pastssm::ssm {

/// expm1(z) / z, equal to 1 at z = 0.
inline double zoh_gain(double z) noexcept { return z == 0.0 ? 1.0 : std::expm1(z) / z; }

/// Derivative of zoh_gain: (z e^z - e^z + 1) / z^2. The closed form cancels
/// catastrophically near zero, so small arguments use the Taylor series.
inline double zoh_gain_deriv(double z) noexcept {
  if (std::abs(z) < 1e-2) {
    return 0.5 + z * (1.0 / 3.0 + z * (1.0 / 8.0 + z * (1.0 / 30.0 + z / 144.0)));
  }
  return (z * std::exp(z) - std::expm1(z)) / (z * z);
}

/// Input gain of the zero-order hold, (exp(delta a) - 1) / a, which tends
/// to delta as a -> 0.
inline double zoh_input_gain(double delta, double a) noexcept {
  return a == 0.0 ? delta : std::expm1(delta * a) / a;
}

/// exp(z), expm1(z) and the input gain for z = delta a from a single
/// transcendental call. Small |z| goes through expm1 so the gain keeps full
/// precision; elsewhere exp(z) - 1 is exact enough and exp stays accurate
/// deep in the negative range.
struct ZohTerms {
  double z;
  double a_bar;
  double em1;
  double gain;

  /// d gain / d a = delta^2 zoh_gain_deriv(z), without another exp.
  double gain_deriv_z() const noexcept {
    if (std::abs(z) < 1e-2) return zoh_gain_deriv(z);
    return (z * a_bar - em1) / (z * z);
  }
};

inline ZohTerms zoh_terms(double delta, double a) noexcept {
  ZohTerms r;
  r.z = delta * a;
  if (std::abs(r.z) < 0.5) {
    r.em1 = std::expm1(r.z);
    r.a_bar = 1.0 + r.em1;
  } else {
    r.a_bar = std::exp(r.z);
    r.em1 = r.a_bar - 1.0;
  }
  r.gain = a == 0.0 ? delta : r.em1 / a;
  return r;
}

template <typename T>
struct Discretized {
  T a_bar;
  T b_bar;
};

/// Zero-order-hold discretization of one diagonal entry:
/// a_bar = exp(delta * a), b_bar = (delta * a)^-1 (exp(delta * a) - 1) delta b,
/// which tends to delta * b as delta * a -> 0.
template <typename T>
Discretized<T> discretize(T a, T b, T delta) {
  if (!(delta > T(0)) || !std::isfinite(delta)) {
    throw DomainError("discretize: step size must be positive and finite, got " + std::to_string(delta));
  }
  const ZohTerms zt = zoh_terms(static_cast<double>(delta), static_cast<double>(a));
  return {static_cast<T>(zt.a_bar), static_cast<T>(zt.gain * static_cast<double>(b))};
}

/// Elementwise discretization of a diagonal system.
template <typename T>
std::vector<Discretized<T>> discretize(std::span<const T> a, std::span<const T> b, T delta) {
  if (a.size() != b.size()) throw ShapeError("discretize: diagonal and input sizes differ");
  std::vector<Discretized<T>> out;
  out.reserve(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out.push_back(discretize(a[i], b[i], delta));
  return out;
}

}  // namespace pastssm::ssm
