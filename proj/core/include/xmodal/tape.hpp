// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "xmodal/tensor.hpp"

namespace xmodal::ad {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while its
/// tape is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode recorder. Forward values are stored on the tape; calling
/// backward() on a scalar replays the recorded backward rules in reverse
/// order, accumulating into per-node gradient buffers.
///
/// Nodes that do not depend on any variable are never differentiated.
class Tape {
 public:
  /// Called with the node's forward value and its incoming gradient.
  using Backward = std::function<void(Tape&, const Tensor& out, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);

  /// Records an operation result. `backward` is dropped if none of `inputs`
  /// requires a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward);

  const Tensor& value(Var v) const { return nodes_[v.id()].value; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }

  /// Gradient buffer of `v`, zero-initialized on first access.
  std::span<double> grad_buffer(Var v);
  void accumulate(Var v, const Tensor& g);

  /// Seeds d(out)/d(out) = 1 for a single-element `out` and propagates.
  void backward(Var out);

  /// Gradient of the last backward() target with respect to `v`; zeros if
  /// `v` did not influence it.
  Tensor grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::deque<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Differentiable operations. Matrices are rank-2; "row" operations also accept
// a rank-1 tensor as a single row.

Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// x[m x n] + bias[n] broadcast over rows.
Var add_row_vector(Var x, Var bias);
/// x[B x d] -> [(B*times) x d], row b repeated `times` times consecutively.
Var repeat_rows(Var x, std::size_t times);
Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var concat_cols(Var a, Var b);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
Var reshape(Var a, Shape shape);
Var row_softmax(Var x);
/// alpha[B x L], grid[(B*L) x M] -> out[b] = sum_l alpha[b,l] * grid[b*L + l].
Var group_weighted_sum(Var alpha, Var grid);
/// grid[(B*L) x M] -> per-group row mean [B x M].
Var group_mean(Var grid, std::size_t group);
/// Scales every row to unit L2 norm; throws DegenerateError on a zero row.
Var row_normalize(Var x);
/// Row-wise inner products of equally shaped operands -> shape {rows}.
Var row_dot(Var a, Var b);
Var sum(Var a);
Var mean(Var a);
/// Per-row margin cosine-embedding loss on precomputed similarities:
/// label +1 -> 1 - cos, label -1 -> max(0, cos - margin).
Var cosine_embedding_loss(Var cos, std::span<const int> labels, double margin);

}  // namespace xmodal::ad
