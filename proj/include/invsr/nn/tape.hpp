// Copyright 2026 The InvSR-Desk Authors. All Rights Reserved.
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

#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

#include "invsr/error.hpp"
#include "invsr/nn/params.hpp"
#include "invsr/tensor.hpp"

namespace invsr::nn {

/// Handle to a node on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

/// Reverse-mode recording of tensor operations.
///
/// Every node owns its value (parameter leaves only reference the store).
/// Gradients exist only for nodes that depend on something trainable; frozen
/// parameters are recorded without a gradient sink, so a frozen network still
/// propagates gradients to its inputs but never touches its own store.
template <class T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Var constant(Tensor<T> value) { return push(std::move(value), false, {}); }

  /// Leaf with its own gradient buffer (e.g. an input we differentiate w.r.t.).
  Var leaf(Tensor<T> value) { return push(std::move(value), true, {}); }

  /// Trainable parameter leaf; gradients accumulate into p.grad.
  Var param(Param<T>& p) {
    Node n;
    n.ref = &p.value;
    n.requires_grad = true;
    n.grad_sink = &p.grad;
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
  }

  /// Frozen parameter leaf: referenced, never differentiated.
  Var frozen(const Param<T>& p) {
    Node n;
    n.ref = &p.value;
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
  }

  /// Records an op result. `backward` runs only if some input requires grad.
  Var record(Tensor<T> value, std::initializer_list<Var> inputs, Backward backward) {
    bool rg = false;
    for (Var v : inputs) rg = rg || nodes_.at(v.id).requires_grad;
    return push(std::move(value), rg, rg ? std::move(backward) : Backward{});
  }

  const Tensor<T>& value(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.ref ? *n.ref : n.value;
  }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Gradient buffer of v, zero-allocated on first use.
  Tensor<T>& grad(Var v) { return grad_at(v.id); }
  Tensor<T>& grad_at(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad_sink) return *n.grad_sink;
    if (n.grad.size() != value(Var{id}).size()) n.grad = Tensor<T>(value(Var{id}).shape());
    return n.grad;
  }
  bool has_grad(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.grad_sink != nullptr || n.grad.size() != 0;
  }

  std::size_t size() const { return nodes_.size(); }

  /// Back-propagates from a scalar node seeded with d(loss)/d(loss) = 1.
  void backward(Var loss, T seed = T{1}) {
    if (value(loss).size() != 1) throw DimensionError("backward: loss must be a single scalar");
    if (!requires_grad(loss)) return;
    grad(loss)[0] += seed;
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.requires_grad || !n.backward || n.grad.size() == 0) continue;
      n.backward(*this, id);
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* ref = nullptr;
    Tensor<T> grad;
    Tensor<T>* grad_sink = nullptr;
    bool requires_grad = false;
    Backward backward;
  };

  Var push(Tensor<T> value, bool rg, Backward bw) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = rg;
    n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

}  // namespace invsr::nn
