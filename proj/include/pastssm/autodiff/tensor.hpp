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
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pastssm/error.hpp"

/// Reverse-mode differentiation over dense row-major tensors.
///
/// Operations evaluate eagerly. When a tape is installed on the calling
/// thread (see TapeScope) and some input requires a gradient, the operation
/// appends a backward closure to that tape. Tape::backward then replays the
/// closures newest-first, which is a reverse topological order because every
/// record is appended after the records of its inputs.
namespace pastssm::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until something flows back
  std::vector<T> comp;  // Neumaier compensation for `grad`
  bool requires_grad = false;

  bool has_grad() const noexcept { return !grad.empty(); }

  /// Adds `g` into the gradient slot with compensated summation, so the
  /// result does not depend on the order contributions arrive in.
  void accumulate(std::span<const T> g) {
    if (grad.empty()) {
      grad.assign(g.begin(), g.end());
      comp.assign(g.size(), T(0));
      return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T s = grad[i];
      const T x = g[i];
      const T t = s + x;
      comp[i] += std::abs(s) >= std::abs(x) ? (s - t) + x : (x - t) + s;
      grad[i] = t;
    }
  }

  /// Folds the compensation terms into `grad`.
  void settle() {
    for (std::size_t i = 0; i < comp.size(); ++i) {
      grad[i] += comp[i];
      comp[i] = T(0);
    }
  }

  void zero_grad() {
    grad.clear();
    comp.clear();
  }
};

/// Shared handle to a node. Copies alias the same storage.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<Node<T>>()) {
    node_->value.assign(numel(shape), fill);
    node_->shape = std::move(shape);
  }
  Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<Node<T>>()) {
    if (values.size() != numel(shape)) {
      throw ShapeError("tensor: " + std::to_string(values.size()) + " values for shape " +
                       pastssm::ad::to_string(shape));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
  }

  static Tensor parameter(Shape shape, std::vector<T> values) {
    Tensor t(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    return t;
  }
  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  std::span<T> mutable_data() { return node_->value; }
  T item() const {
    if (size() != 1) throw ShapeError("item: tensor holds " + std::to_string(size()) + " values");
    return node_->value[0];
  }
  T operator[](std::size_t i) const { return node_->value[i]; }

  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  /// Settled gradient, zeros if none has arrived.
  std::vector<T> grad() const {
    if (!node_->has_grad()) return std::vector<T>(size(), T(0));
    std::vector<T> g = node_->grad;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += node_->comp[i];
    return g;
  }
  bool has_grad() const noexcept { return node_->has_grad(); }
  void zero_grad() { node_->zero_grad(); }

  /// Copy of the values with no history.
  Tensor detach() const { return Tensor(shape(), node_->value); }

  Node<T>* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node<T>>& ptr() const noexcept { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <typename T>
class Tape;

template <typename T>
inline thread_local Tape<T>* current_tape = nullptr;

/// Ordered record of differentiable operations.
template <typename T>
class Tape {
 public:
  using Backward = std::function<void(std::span<const T>)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::string_view op, const Tensor<T>& out,
              std::vector<std::shared_ptr<Node<T>>> inputs, Backward fn) {
    entries_.push_back(Entry{op, out.ptr(), std::move(inputs), std::move(fn)});
  }

  std::size_t size() const noexcept { return entries_.size(); }

  /// Seeds d(root)/d(root) = `seed` and propagates to every recorded input.
  /// A tape can be replayed once.
  void backward(const Tensor<T>& root, T seed = T(1)) {
    if (consumed_) throw ArgumentError("tape already replayed");
    consumed_ = true;
    if (!root.requires_grad()) return;
    std::vector<T> g(root.size(), seed);
    root.node()->accumulate(g);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      Node<T>& out = *it->out;
      if (!out.has_grad()) continue;
      out.settle();
      it->fn(out.grad);
      for (const auto& in : it->inputs) {
        if (!in->requires_grad || !in->has_grad()) continue;
        for (T v : in->grad) {
          if (!std::isfinite(v)) {
            throw NumericError("non-finite gradient in backward of '" + std::string(it->op) + "'");
          }
        }
      }
    }
  }

  void clear() {
    entries_.clear();
    consumed_ = false;
  }

 private:
  struct Entry {
    std::string_view op;
    std::shared_ptr<Node<T>> out;
    std::vector<std::shared_ptr<Node<T>>> inputs;
    Backward fn;
  };
  std::vector<Entry> entries_;
  bool consumed_ = false;
};

/// Installs a tape for the current thread for the scope's lifetime.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : previous_(current_tape<T>) { current_tape<T> = &tape; }
  ~TapeScope() { current_tape<T> = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

/// Suspends recording on the current thread.
template <typename T>
class NoGradScope {
 public:
  NoGradScope() : previous_(current_tape<T>) { current_tape<T> = nullptr; }
  ~NoGradScope() { current_tape<T> = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<T>* previous_;
};

namespace detail {

template <typename T>
Tape<T>* tape_for(std::initializer_list<const Tensor<T>*> inputs) {
  Tape<T>* tape = current_tape<T>;
  if (!tape) return nullptr;
  for (const Tensor<T>* t : inputs) {
    if (t->requires_grad()) return tape;
  }
  return nullptr;
}

/// Marks `out` as differentiable and records `fn` when any input requires a
/// gradient under an active tape. Returns false when nothing was recorded.
template <typename T, typename Fn>
bool record(std::string_view op, Tensor<T>& out, std::initializer_list<const Tensor<T>*> inputs,
            Fn&& fn) {
  Tape<T>* tape = tape_for<T>(inputs);
  if (!tape) return false;
  out.set_requires_grad(true);
  std::vector<std::shared_ptr<Node<T>>> nodes;
  nodes.reserve(inputs.size());
  for (const Tensor<T>* t : inputs) nodes.push_back(t->ptr());
  tape->record(op, out, std::move(nodes), std::forward<Fn>(fn));
  return true;
}

template <typename T>
void push_grad(const Tensor<T>& t, std::span<const T> g) {
  if (t.requires_grad()) t.node()->accumulate(g);
}

}  // namespace detail

}  // namespace pastssm::ad
