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

#include <cstdint>
#include <random>
#include <vector>

#include "pastssm/autodiff/ops.hpp"

namespace testing_support {

using pastssm::ad::Shape;
using pastssm::ad::Tensor;

inline std::vector<double> random_values(std::size_t n, std::uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

inline Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double lo = -1, double hi = 1) {
  const std::size_t n = pastssm::ad::numel(shape);
  return Tensor<double>(std::move(shape), random_values(n, seed, lo, hi));
}

/// Scalar probe sum(y * w) with fixed random weights, so every output
/// coordinate carries a distinct gradient.
inline Tensor<double> probe(const Tensor<double>& y, std::uint64_t seed = 99) {
  Tensor<double> w(y.shape(), random_values(y.size(), seed, 0.5, 1.5));
  return pastssm::ad::sum(pastssm::ad::mul(y, w));
}

}  // namespace testing_support
