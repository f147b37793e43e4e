// SPDX-FileCopyrightText: Copyright (c) 2026 The molflow Authors.
// SPDX-License-Identifier: Apache-2.0

// Reverse-mode differentiation over dense row-major matrices.
//
// Every value is a rank-2 Tensor (scalars are 1x1). Primitives record onto a
// Tape; backward rules are themselves written in terms of primitives, so a
// vector-Jacobian product taken with create_graph=true is again differentiable.
// That second order is what the Hutchinson trace/Frobenius terms of the flow
// objective need during training.

#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace molflow::ad {

class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Tensor scalar(double value) { return Tensor(1, 1, value); }
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::vector<std::size_t> shape() const { return {rows_, cols_}; }
  std::string shape_string() const;

  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double item() const;

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }

  bool all_finite() const noexcept;
  double max_abs() const noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

//! Shared immutable row-index list (gather / segment targets).
using Index = std::shared_ptr<const std::vector<std::size_t>>;
Index make_index(std::vector<std::size_t> values);
//! Index of n zeros; gathering a 1xC row with it expands to nxC.
Index zeros_index(std::size_t n);

class Tape;

//! Handle to a node on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

struct Node;

//! Computes input gradients of one node. `want[k]` says whether input k needs
//! a gradient; entries for unwanted inputs may be left invalid.
using BackwardRule = std::function<std::vector<Var>(const Node& node, std::size_t self,
                                                    const Var& grad,
                                                    const std::vector<bool>& want)>;

struct Node {
  Tensor owned;
  const Tensor* borrowed = nullptr;
  std::vector<std::size_t> inputs;
  BackwardRule rule;
  bool requires_grad = false;
  const char* op = "leaf";

  const Tensor& value() const { return borrowed != nullptr ? *borrowed : owned; }
};

//! Append-only record of primitive applications. Single-threaded; one tape per
//! forward pass. Node storage is a deque so references stay valid while
//! backward rules append new nodes.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);
  //! Leaf that refers to an external tensor without copying it. The tensor
  //! must outlive every use of the tape.
  Var reference(const Tensor& value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  //! Records a primitive result. When recording is off the node is stored as
  //! a constant with no inputs.
  Var record(Tensor value, std::vector<Var> inputs, BackwardRule rule, const char* op);

  const Node& node(std::size_t id) const { return nodes_[id]; }
  std::size_t size() const noexcept { return nodes_.size(); }
  void truncate(std::size_t size);
  void clear() { nodes_.clear(); }

  bool recording() const noexcept { return recording_; }
  void set_recording(bool on) noexcept { recording_ = on; }

  //! Reverse sweep from `root` seeded with `seed`. Only nodes flagged in
  //! `active` (indexed by node id, size >= root+1) receive gradients.
  std::vector<Var> sweep(const Var& root, const Var& seed, const std::vector<char>& active,
                         bool create_graph);

 private:
  std::deque<Node> nodes_;
  bool recording_ = true;
};

//! Disables recording for its lifetime.
class NoGradGuard {
 public:
  explicit NoGradGuard(Tape& tape) : tape_(tape), previous_(tape.recording()) {
    tape_.set_recording(false);
  }
  ~NoGradGuard() { tape_.set_recording(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape& tape_;
  bool previous_;
};

// ---------------------------------------------------------------------------
// Primitives. Shapes must match exactly; there is no implicit broadcasting.

Var matmul(const Var& a, const Var& b, bool transpose_a = false, bool transpose_b = false);
Var add(const Var& a, const Var& b);
Var subtract(const Var& a, const Var& b);
Var multiply(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var concat(const std::vector<Var>& parts);  // along columns
Var slice_cols(const Var& a, std::size_t begin, std::size_t count);
//! Places `a` at column `begin` of a zero matrix with `total` columns.
Var pad_cols(const Var& a, std::size_t begin, std::size_t total);
Var sum(const Var& a);
Var mean(const Var& a);
Var swish(const Var& a);
//! Softmax along axis 0 (down columns) or 1 (across rows).
Var softmax(const Var& a, int axis);
//! Softmax over groups of rows sharing a segment id, independently per column.
Var segment_softmax(const Var& a, const Index& segments, std::size_t num_segments);
//! Scatter-add of rows into `num_segments` output rows.
Var segment_sum(const Var& a, const Index& segments, std::size_t num_segments);
Var gather(const Var& a, const Index& rows);
Var square(const Var& a);
Var sqrt(const Var& a);
Var log(const Var& a);
Var exp(const Var& a);
Var reciprocal(const Var& a);

//! 1xC row repeated n times.
Var expand_rows(const Var& row, std::size_t n);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return subtract(a, b); }
inline Var operator*(const Var& a, const Var& b) { return multiply(a, b); }

// ---------------------------------------------------------------------------
// Differentiation.

//! Gradients of scalar `root` with respect to each of `leaves`. Leaves that
//! the root does not depend on get zero tensors.
std::vector<Tensor> backward(const Var& root, std::span<const Var> leaves);

//! cotangent^T * d(output)/d(wrt), treating `wrt` as the independent variable.
//! With create_graph the result is recorded and can be differentiated again.
Var vjp(const Var& output, const Var& cotangent, const Var& wrt, bool create_graph);
Tensor vjp(const Var& output, const Tensor& cotangent, const Var& wrt);

}  // namespace molflow::ad
