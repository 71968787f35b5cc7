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
#include <cstddef>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "pastssm/autodiff/tensor.hpp"

namespace pastssm::ad {

/// Ordered collection of named trainable tensors with AdamW moments.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
    bool decay = true;
    std::vector<T> m, v;
  };

  Tensor<T>& add(const std::string& name, Tensor<T> value, bool decay) {
    if (index_.count(name)) throw ArgumentError("parameter '" + name + "' registered twice");
    value.set_requires_grad(true);
    index_[name] = entries_.size();
    const std::size_t n = value.size();
    entries_.push_back(Entry{name, std::move(value), decay, std::vector<T>(n, T(0)), std::vector<T>(n, T(0))});
    return entries_.back().value;
  }

  const Tensor<T>& at(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw ArgumentError("unknown parameter '" + name + "'");
    return entries_[it->second].value;
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const noexcept { return entries_.size(); }
  std::vector<Entry>& entries() noexcept { return entries_; }
  const std::vector<Entry>& entries() const noexcept { return entries_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.value.zero_grad();
  }

  long step_count() const noexcept { return steps_; }
  void set_step_count(long s) noexcept { steps_ = s; }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  long steps_ = 0;
};

struct AdamWConfig {
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One decoupled-weight-decay Adam update:
///   p <- p * (1 - lr * wd)   (decaying parameters only)
///   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
///   p <- p - lr * m_hat / (sqrt(v_hat) + eps)
/// `grads[i]` belongs to the i-th registered parameter.
template <typename T>
void adamw_step(ParamStore<T>& store, std::span<const std::vector<T>> grads, double lr,
                const AdamWConfig& cfg = {}) {
  auto& entries = store.entries();
  if (grads.size() != entries.size()) {
    throw ShapeError("adamw_step: " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(entries.size()) + " parameters");
  }
  for (std::size_t k = 0; k < entries.size(); ++k) {
    if (grads[k].size() != entries[k].value.size()) {
      throw ShapeError("adamw_step: gradient shape mismatch for '" + entries[k].name + "'");
    }
    for (T g : grads[k]) {
      if (!std::isfinite(g)) throw NumericError("adamw_step: non-finite gradient for '" + entries[k].name + "'");
    }
  }
  const long step = store.step_count() + 1;
  store.set_step_count(step);
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t k = 0; k < entries.size(); ++k) {
    auto& e = entries[k];
    auto p = e.value.mutable_data();
    const double shrink = e.decay ? 1.0 - lr * cfg.weight_decay : 1.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = grads[k][i];
      const double m = cfg.beta1 * e.m[i] + (1.0 - cfg.beta1) * g;
      const double v = cfg.beta2 * e.v[i] + (1.0 - cfg.beta2) * g * g;
      e.m[i] = static_cast<T>(m);
      e.v[i] = static_cast<T>(v);
      const double upd = (m / c1) / (std::sqrt(v / c2) + cfg.eps);
      p[i] = static_cast<T>(p[i] * shrink - lr * upd);
    }
  }
}

/// Uses the gradients accumulated on the parameters themselves.
template <typename T>
void adamw_step(ParamStore<T>& store, double lr, const AdamWConfig& cfg = {}) {
  std::vector<std::vector<T>> grads;
  grads.reserve(store.size());
  for (const auto& e : store.entries()) grads.push_back(e.value.grad());
  adamw_step<T>(store, grads, lr, cfg);
}

}  // namespace pastssm::ad
