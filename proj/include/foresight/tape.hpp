// Copyright (C) 2026 The Foresight Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "foresight/params.hpp"
#include "foresight/tensor.hpp"

namespace foresight::nn {

// Handle to a value recorded on a Tape.
struct Var {
  std::uint32_t id = 0;
};

// Reverse-mode tape over rank-2 tensors. Every op evaluates eagerly, checks its
// result for non-finite entries, and records a closure for the backward pass.
// backward() runs closures in exact reverse recording order; gradients add up.
class Tape {
 public:
  Tape() = default;
  explicit Tape(const ParamStore* params) : params_(params) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaves.
  Var leaf(Tensor value);
  // Binds a named parameter (value copied at first use; later uses share the node).
  Var param(const std::string& name);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  // Gradient of the last backward() target; zeros if nothing flowed into v.
  Tensor grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  // Ops.
  Var matmul(Var a, Var b);     // a[m x k] b[k x n]
  Var matmul_nt(Var a, Var b);  // a[m x k] b[n x k]^T
  Var add(Var a, Var b);        // same shape
  Var add_row(Var x, Var bias); // bias [1 x n] broadcast over rows
  Var scale(Var x, double s);
  Var relu(Var x);
  Var sum(Var x);               // -> [1 x 1]
  Var gather_rows(Var table, std::span<const std::size_t> rows);
  Var slice_rows(Var x, std::size_t begin, std::size_t end);
  Var slice_cols(Var x, std::size_t begin, std::size_t end);
  Var concat_cols(std::span<const Var> parts);
  Var mul_col(Var x, Var col);  // x[r x c] * col[r x 1], broadcast over columns
  Var softmax_rows(Var x);
  // Softmax over columns with key_valid[j] == 0 excluded (weight exactly 0).
  Var masked_softmax_rows(Var x, std::span<const std::uint8_t> key_valid);
  Var masked_mean_rows(Var x, std::span<const std::uint8_t> row_valid);  // -> [1 x c]
  Var rms_norm_rows(Var x, double eps = 1e-6);
  // -log softmax(logits)[target]; logits [1 x n] -> [1 x 1].
  Var cross_entropy(Var logits, std::size_t target);
  // Sum over entries of binary cross-entropy of sigmoid(z) against labels, with
  // the probability clamped to [eps, 1 - eps]; clamped entries pass no gradient.
  Var bce_with_logits(Var z, std::span<const double> labels, double eps);

  // Seeds d(loss)/d(loss) = 1 and back-propagates. loss must be [1 x 1].
  void backward(Var loss);
  // Adds the gradients of bound parameters into store.grad.
  void accumulate_param_grads(ParamStore& store) const;

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void()> back;
  };

  Var push(Tensor value, std::string_view op);
  Tensor& grad_ref(Var v);
  bool has_grad(Var v) const { return !nodes_[v.id].grad.empty(); }

  const ParamStore* params_ = nullptr;
  std::vector<Node> nodes_;
  std::unordered_map<std::string, Var> bound_;
};

// Scaled dot-product attention, softmax(q k^T / sqrt(d_head) + mask) v, split
// across `heads` equal column groups. key_valid marks usable key positions;
// a query with no valid key is an error.
Var attention(Tape& tape, Var q, Var k, Var v, std::span<const std::uint8_t> key_valid,
              std::size_t heads = 1);

// Position-wise feed-forward block: relu(x W1 + b1) W2 + b2.
Var ffn(Tape& tape, Var x, Var w1, Var b1, Var w2, Var b2);

}  // namespace foresight::nn
