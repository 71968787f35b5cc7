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
#include <vector>

#include "pastssm/autodiff/tensor.hpp"
#include "pastssm/ssm/discretize.hpp"
#include "pastssm/ssm/scan.hpp"

namespace pastssm::ad {

/// Differentiable diagonal selective scan.
///   u [L, E], delta [L, E] (positive), a_log [E, N] with a = -exp(a_log),
///   b [L, N], c [L, N], d [E]  ->  y [L, E]
/// The backward pass runs the adjoint recurrence over the saved states.
template <typename T>
Tensor<T> selective_scan(const Tensor<T>& u, const Tensor<T>& delta, const Tensor<T>& a_log,
                         const Tensor<T>& b, const Tensor<T>& c, const Tensor<T>& d) {
  if (u.rank() != 2 || a_log.rank() != 2 || b.rank() != 2) {
    throw ShapeError("selective_scan: expected u [L,E], a_log [E,N], b [L,N]");
  }
  const std::size_t len = u.dim(0), ch = u.dim(1), ns = a_log.dim(1);
  if (delta.shape() != u.shape() || a_log.dim(0) != ch || b.dim(0) != len || b.dim(1) != ns ||
      c.shape() != b.shape() || d.size() != ch) {
    throw ShapeError("selective_scan: inconsistent shapes u" + to_string(u.shape()) + " delta" +
                     to_string(delta.shape()) + " a_log" + to_string(a_log.shape()) + " b" +
                     to_string(b.shape()) + " c" + to_string(c.shape()) + " d" + to_string(d.shape()));
  }
  std::vector<T> a(ch * ns);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = -std::exp(a_log[i]);
  ssm::ScanView<T> view{len, ch, ns, u.data(), delta.data(), a, b.data(), c.data(), d.data()};
  const bool want_grad = detail::tape_for<T>({&u, &delta, &a_log, &b, &c, &d}) != nullptr;
  std::vector<T> states;
  Tensor<T> out({len, ch}, ssm::sequential_scan(view, want_grad ? &states : nullptr));
  detail::record<T>(
      "selective_scan", out, {&u, &delta, &a_log, &b, &c, &d},
      [u, delta, a_log, b, c, d, a = std::move(a), states = std::move(states), len, ch,
       ns](std::span<const T> gy) {
        const std::size_t width = ch * ns;
        std::vector<double> gu(len * ch, 0.0), gdelta(len * ch, 0.0), ga(width, 0.0);
        std::vector<double> gb(len * ns, 0.0), gc(len * ns, 0.0), gd(ch, 0.0);
        std::vector<double> gh(width, 0.0);
        for (std::size_t t = len; t-- > 0;) {
          for (std::size_t e = 0; e < ch; ++e) {
            const double g = gy[t * ch + e];
            const double ut = u[t * ch + e];
            const double dt = delta[t * ch + e];
            gd[e] += g * ut;
            gu[t * ch + e] += g * d[e];
            for (std::size_t n = 0; n < ns; ++n) {
              const std::size_t i = e * ns + n;
              const double ht = states[t * width + i];
              gc[t * ns + n] += g * ht;
              gh[i] += g * c[t * ns + n];
              // h_t = exp(z) h_{t-1} + phi(delta, a) b u, z = delta a,
              // phi = expm1(z) / a.
              const double hp = t > 0 ? static_cast<double>(states[(t - 1) * width + i]) : 0.0;
              const double an = a[i];
              const ssm::ZohTerms zt = ssm::zoh_terms(dt, an);
              const double abar = zt.a_bar;
              const double bt = b[t * ns + n];
              const double phi = zt.gain;
              const double g_abar = gh[i] * hp;
              const double g_phi = gh[i] * bt * ut;
              gb[t * ns + n] += gh[i] * phi * ut;
              gu[t * ch + e] += gh[i] * phi * bt;
              gdelta[t * ch + e] += g_abar * abar * an + g_phi * abar;
              ga[i] += g_abar * abar * dt + g_phi * dt * dt * zt.gain_deriv_z();
              gh[i] *= abar;
            }
          }
        }
        const auto cast = [](const std::vector<double>& v) { return std::vector<T>(v.begin(), v.end()); };
        // d a / d a_log = a
        for (std::size_t i = 0; i < width; ++i) ga[i] *= a[i];
        detail::push_grad<T>(u, cast(gu));
        detail::push_grad<T>(delta, cast(gdelta));
        detail::push_grad<T>(a_log, cast(ga));
        detail::push_grad<T>(b, cast(gb));
        detail::push_grad<T>(c, cast(gc));
        detail::push_grad<T>(d, cast(gd));
      });
  return out;
}

}  // namespace pastssm::ad
