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
#include "voxelstruct/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace voxelstruct {

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

const Tensor& BackwardContext::input(std::size_t i) const { return tape_->value((*parents_)[i]); }

Tensor* BackwardContext::input_grad(std::size_t i) {
  const std::size_t id = (*parents_)[i];
  if (!tape_->requires_grad(id)) return nullptr;
  return &tape_->grad_buffer(id);
}

Var Tape::leaf(Tensor value, bool requires_grad, std::string name) {
  if (!value.all_finite()) {
    throw NumericError("non-finite value in leaf '" + name + "' " + shape_str(value.shape()));
  }
  Node node;
  node.op = name.empty() ? std::string("leaf") : "leaf:" + name;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string op, Tensor value, std::vector<Var> parents, BackwardFn backward) {
  if (consumed_) throw std::logic_error("recording '" + op + "' on a consumed tape");
  if (!value.all_finite()) {
    throw NumericError("non-finite forward value in op '" + op + "' (node " + std::to_string(nodes_.size()) +
                       ", shape " + shape_str(value.shape()) + ")");
  }
  Node node;
  node.op = std::move(op);
  node.value = std::move(value);
  for (const Var& p : parents) {
    if (p.tape_ != this) throw std::logic_error("op '" + node.op + "' mixes vars from different tapes");
    node.parents.push_back(p.id_);
    node.requires_grad = node.requires_grad || nodes_[p.id_].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape_ != this) throw std::logic_error("backward: loss belongs to another tape");
  if (consumed_) throw std::logic_error("backward: tape already consumed");
  if (nodes_[loss.id_].value.size() != 1) {
    throw DimensionError("backward: loss must be scalar, got shape " + shape_str(nodes_[loss.id_].value.shape()));
  }
  consumed_ = true;
  if (!nodes_[loss.id_].requires_grad) return;
  grad_buffer(loss.id_).fill(1.0);

  for (std::size_t id = loss.id_ + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    BackwardContext ctx;
    ctx.tape_ = this;
    ctx.parents_ = &n.parents;
    ctx.out_grad_ = &n.grad;
    ctx.output_ = &n.value;
    n.backward(ctx);
    for (std::size_t p : n.parents) {
      const Node& parent = nodes_[p];
      if (parent.requires_grad && !parent.grad.empty() && !parent.grad.all_finite()) {
        throw NumericError("non-finite gradient flowing from op '" + n.op + "' (node " + std::to_string(id) +
                           ") into node " + std::to_string(p) + " '" + parent.op + "'");
      }
    }
  }
  // Leaves that received nothing still get a zero buffer of the right shape.
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    if (nodes_[id].requires_grad) grad_buffer(id);
  }
}

const Tensor& Tape::grad(Var v) {
  if (v.tape_ != this) throw std::logic_error("grad: var belongs to another tape");
  return grad_buffer(v.id_);
}

}  // namespace voxelstruct
