/* Copyright 2026 The voxelstruct Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

// Reverse-mode gradient tape.
//
// Every primitive appends one node holding its forward value and a backward
// closure. Nodes are stored in recording order, which is a valid topological
// order, so backward() simply walks the node list in reverse. A tape can be
// differentiated once; after that it only serves reads of values and grads.

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "voxelstruct/tensor.hpp"

namespace voxelstruct {

class Tape;

/// Handle to one node of a Tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// What a backward closure sees: the upstream gradient, the saved forward
/// values, and accumulation buffers for the parents that need gradients.
class BackwardContext {
 public:
  const Tensor& out_grad() const { return *out_grad_; }
  const Tensor& output() const { return *output_; }
  const Tensor& input(std::size_t i) const;
  /// Gradient buffer of parent `i`, or nullptr if that parent needs no gradient.
  Tensor* input_grad(std::size_t i);

 private:
  friend class Tape;
  Tape* tape_ = nullptr;
  const std::vector<std::size_t>* parents_ = nullptr;
  const Tensor* out_grad_ = nullptr;
  const Tensor* output_ = nullptr;
};

using BackwardFn = std::function<void(BackwardContext&)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Input node. Leaves with requires_grad get a gradient buffer after backward().
  Var leaf(Tensor value, bool requires_grad, std::string name = {});
  Var constant(Tensor value, std::string name = {}) { return leaf(std::move(value), false, std::move(name)); }

  /// Appends a primitive. The forward value must already be computed.
  /// Throws NumericError if it contains NaN/Inf.
  Var record(std::string op, Tensor value, std::vector<Var> parents, BackwardFn backward);

  /// Seeds d(loss)/d(loss) = 1 and runs every closure in reverse recording order.
  void backward(Var loss);

  /// Gradient of the last backward() w.r.t. `v` (zeros if v did not require grad).
  const Tensor& grad(Var v);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const std::string& op_name(std::size_t id) const { return nodes_.at(id).op; }
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  friend class BackwardContext;

  struct Node {
    std::string op;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::size_t> parents;
    BackwardFn backward;
  };

  Tensor& grad_buffer(std::size_t id);

  std::deque<Node> nodes_;  // deque: values stay put while the tape grows
  bool consumed_ = false;
};

}  // namespace voxelstruct
