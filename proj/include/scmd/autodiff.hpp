// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "scmd/error.hpp"
#include "scmd/types.hpp"

/// Minimal reverse-mode differentiation over dense row-major matrices.
///
/// A `Tape` owns every value produced during a forward pass. Ops are free
/// functions taking and returning `Var` handles; each op records a closure
/// that pushes the output gradient into its inputs. Tensors are rank 2
/// (vectors are 1 x n rows), which is all an MLP student needs.
///
/// A tape is single-owner: do not share one across threads. Separate tapes
/// are independent.
namespace scmd::ad {

/// Lower bound on the norm accepted by `l2_normalize`.
inline constexpr double kNormEpsilon = 1e-12;

class Tape;

/// Handle to a tensor recorded on a tape.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  const Matrix& grad() const;
  bool requires_grad() const;
  std::array<Index, 2> shape() const { return {rows(), cols()}; }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const;

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backprop = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf tensor. With `requires_grad` its gradient accumulates across
  /// backward calls until `zero_grad`.
  Var leaf(Matrix value, bool requires_grad = true);
  Var constant(Matrix value) { return leaf(std::move(value), false); }

  /// Records an op output. `inputs` must already be on this tape.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backprop backprop);

  /// Propagates d(loss)/d(.) to every reachable leaf that requires grad.
  /// Intermediate buffers are reset on each call; leaf buffers accumulate.
  void backward(Var loss);
  void zero_grad();

  std::size_t size() const { return nodes_.size(); }

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Adds `g` into the gradient buffer of `v` if it tracks gradients.
  void accumulate(Var v, const Matrix& g);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool is_leaf = true;
    Backprop backprop;
  };

  Node& node(Var v);
  std::vector<Node> nodes_;
};

// Linear algebra
Var matmul(Var a, Var b);
Var transpose(Var a);

// Elementwise
Var add(Var a, Var b);
/// Adds a 1 x n row to every row of `a`.
Var add_row(Var a, Var row);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var mul_scalar(Var a, double s);
Var relu(Var a);
Var log(Var a);

// Reductions
Var sum(Var a);
Var mean(Var a);
/// B x C -> B x 1.
Var row_sum(Var a);

// Indexing
Var gather_rows(Var a, std::span<const std::size_t> rows);
/// Picks a[i, cols[i]] for each row; returns B x 1.
Var pick(Var a, std::span<const int> cols);

// Row-wise distributions
/// Row-wise tempered softmax, exp(z / T) normalised per row.
Var softmax_t(Var logits, double temperature);
/// Row-wise log of `softmax_t`, computed with the max-shift.
Var log_softmax_t(Var logits, double temperature);
/// Row-wise unit L2 normalisation; rows with norm <= kNormEpsilon throw.
Var l2_normalize(Var a);

/// Scalar function of one tensor, built on a fresh tape.
using ScalarFn = std::function<Var(Tape&, Var)>;

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
double finite_diff_check(const ScalarFn& f, const Matrix& x, double eps = 1e-4);

}  // namespace scmd::ad
