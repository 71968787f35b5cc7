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
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "pastssm/autodiff/tensor.hpp"

namespace pastssm::ad {

struct GradCheckOptions {
  double step = 1e-5;
  /// Inputs larger than this are checked on a random subset of this size.
  std::size_t max_coords = 64;
  /// Lower bound of the relative-error denominator.
  double floor = 1e-6;
  std::uint64_t seed = 7;
};

struct GradCheckResult {
  double max_rel_error = 0;
  std::size_t input = 0;  // worst input
  std::size_t coord = 0;  // worst coordinate within it
  double analytic = 0;
  double numeric = 0;
};

/// Compares tape gradients of the scalar `fn()` with central differences
/// over the given inputs. `fn` must read its inputs' current values on every
/// call.
inline GradCheckResult grad_check(const std::function<Tensor<double>()>& fn,
                                  std::vector<Tensor<double>> inputs, GradCheckOptions opt = {}) {
  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.zero_grad();
  }
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    const Tensor<double> y = fn();
    if (y.size() != 1) throw ShapeError("grad_check: function must return a scalar");
    tape.backward(y);
  }
  std::mt19937_64 rng(opt.seed);
  GradCheckResult res;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor<double>& in = inputs[k];
    const std::vector<double> analytic = in.grad();
    std::vector<std::size_t> coords(in.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > opt.max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opt.max_coords);
    }
    auto values = in.mutable_data();
    for (std::size_t i : coords) {
      const double orig = values[i];
      double plus = 0, minus = 0;
      {
        NoGradScope<double> off;
        values[i] = orig + opt.step;
        plus = fn().item();
        values[i] = orig - opt.step;
        minus = fn().item();
        values[i] = orig;
      }
      const double numeric = (plus - minus) / (2 * opt.step);
      const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), opt.floor});
      const double err = std::abs(numeric - analytic[i]) / denom;
      if (err > res.max_rel_error || !std::isfinite(err)) {
        res = {err, k, i, analytic[i], numeric};
      }
    }
  }
  return res;
}

}  // namespace pastssm::ad
