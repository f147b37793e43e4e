// SPDX-FileCopyrightText: Copyright (c) 2026 The molflow Authors.
// SPDX-License-Identifier: Apache-2.0

#include "molflow/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "molflow/error.hpp"

namespace molflow::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_matrix(const Tensor& t) { return ConstMap(t.data().data(), t.rows(), t.cols()); }
MutMap as_matrix(Tensor& t) { return MutMap(t.data().data(), t.rows(), t.cols()); }

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " +
                   b.shape_string());
}

void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw AutodiffError(std::string(op) + ": inputs on different tapes");
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error(op, a.value(), b.value());
}

void require_segments(const char* op, const Tensor& a, const Index& segments,
                      std::size_t num_segments) {
  if (!segments || segments->size() != a.rows()) {
    throw ShapeError(std::string(op) + ": segment list length " +
                     std::to_string(segments ? segments->size() : 0) + " != rows of " +
                     a.shape_string());
  }
  for (std::size_t s : *segments) {
    if (s >= num_segments) {
      throw ShapeError(std::string(op) + ": segment id " + std::to_string(s) + " >= " +
                       std::to_string(num_segments));
    }
  }
}

Var input(const Node& node, const Var& grad, std::size_t k) {
  return Var(&grad.tape(), node.inputs[k]);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

template <class F>
Tensor map_values(const Tensor& a, F&& f) {
  Tensor out(a.rows(), a.cols());
  auto src = a.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

Tensor matmul_value(const Tensor& a, const Tensor& b, bool ta, bool tb) {
  const std::size_t m = ta ? a.cols() : a.rows();
  const std::size_t k = ta ? a.rows() : a.cols();
  const std::size_t k2 = tb ? b.cols() : b.rows();
  const std::size_t n = tb ? b.rows() : b.cols();
  if (k != k2) shape_error("matmul", a, b);
  Tensor out(m, n);
  if (m == 0 || n == 0) return out;
  auto o = as_matrix(out);
  if (k == 0) return out;
  const auto am = as_matrix(a);
  const auto bm = as_matrix(b);
  if (!ta && !tb) {
    o.noalias() = am * bm;
  } else if (ta && !tb) {
    o.noalias() = am.transpose() * bm;
  } else if (!ta && tb) {
    o.noalias() = am * bm.transpose();
  } else {
    o.noalias() = am.transpose() * bm.transpose();
  }
  return out;
}

// Second derivative of swish; terminal (no backward of its own).
Var swish_second(const Var& a) {
  Tensor v = map_values(a.value(), [](double x) {
    const double s = sigmoid(x);
    return s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s));
  });
  return a.tape().record(
      std::move(v), {a},
      [](const Node&, std::size_t, const Var&, const std::vector<bool>&) -> std::vector<Var> {
        throw AutodiffError("swish: derivatives above second order are not supported");
      },
      "swish_second");
}

Var swish_prime(const Var& a) {
  Tensor v = map_values(a.value(), [](double x) {
    const double s = sigmoid(x);
    return s + x * s * (1.0 - s);
  });
  return a.tape().record(
      std::move(v), {a},
      [](const Node& node, std::size_t, const Var& g, const std::vector<bool>&) {
        return std::vector<Var>{multiply(g, swish_second(input(node, g, 0)))};
      },
      "swish_prime");
}

// Constant column of ones / row of ones used to express broadcasts as matmuls.
Var ones(Tape& tape, std::size_t rows, std::size_t cols) {
  return tape.constant(Tensor(rows, cols, 1.0));
}

// Expands a 1x1 gradient to the shape of `like`.
Var broadcast_scalar(const Var& g, std::size_t rows, std::size_t cols) {
  Tape& t = g.tape();
  return matmul(matmul(ones(t, rows, 1), g), ones(t, 1, cols));
}

struct RecordingRestore {
  Tape& tape;
  bool previous;
  ~RecordingRestore() { tape.set_recording(previous); }
};

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("tensor: data length " + std::to_string(data_.size()) + " != " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("tensor: ragged initializer");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(r, c, std::move(data));
}

std::string Tensor::shape_string() const {
  return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item: tensor is " + shape_string() + ", not scalar");
  return data_[0];
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::max_abs() const noexcept {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

Index make_index(std::vector<std::size_t> values) {
  return std::make_shared<const std::vector<std::size_t>>(std::move(values));
}

Index zeros_index(std::size_t n) { return make_index(std::vector<std::size_t>(n, 0)); }

// ---------------------------------------------------------------------------
// Var / Tape

const Tensor& Var::value() const { return tape_->node(id_).value(); }

bool Var::requires_grad() const { return tape_->node(id_).requires_grad; }

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node& n = nodes_.emplace_back();
  n.owned = std::move(value);
  n.requires_grad = requires_grad;
  return Var(this, nodes_.size() - 1);
}

Var Tape::reference(const Tensor& value, bool requires_grad) {
  Node& n = nodes_.emplace_back();
  n.borrowed = &value;
  n.requires_grad = requires_grad;
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardRule rule, const char* op) {
  Node& n = nodes_.emplace_back();
  n.owned = std::move(value);
  n.op = op;
  if (!recording_) return Var(this, nodes_.size() - 1);
  bool any = false;
  for (const Var& v : inputs) any = any || v.requires_grad();
  if (!any) return Var(this, nodes_.size() - 1);
  n.requires_grad = true;
  n.inputs.reserve(inputs.size());
  for (const Var& v : inputs) n.inputs.push_back(v.id());
  n.rule = std::move(rule);
  return Var(this, nodes_.size() - 1);
}

void Tape::truncate(std::size_t size) {
  if (size < nodes_.size()) nodes_.resize(size);
}

std::vector<Var> Tape::sweep(const Var& root, const Var& seed, const std::vector<char>& active,
                             bool create_graph) {
  std::vector<Var> grads(root.id() + 1);
  grads[root.id()] = seed;
  RecordingRestore restore{*this, recording_};
  recording_ = create_graph;
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    if (!grads[id].valid()) continue;
    const Node& n = nodes_[id];
    if (n.inputs.empty()) continue;
    std::vector<bool> want(n.inputs.size());
    bool any = false;
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      want[k] = active[n.inputs[k]] != 0;
      any = any || want[k];
    }
    if (!any) continue;
    if (!n.rule) throw AutodiffError(std::string("no backward rule for op ") + n.op);
    std::vector<Var> parts = n.rule(n, id, grads[id], want);
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      if (!want[k] || !parts[k].valid()) continue;
      Var& slot = grads[n.inputs[k]];
      slot = slot.valid() ? add(slot, parts[k]) : parts[k];
    }
    if (id != root.id()) grads[id] = Var();
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Primitives

Var matmul(const Var& a, const Var& b, bool ta, bool tb) {
  if (&a.tape() != &b.tape()) throw AutodiffError("matmul: inputs on different tapes");
  Tensor v = matmul_value(a.value(), b.value(), ta, tb);
  return a.tape().record(
      std::move(v), {a, b},
      [ta, tb](const Node& node, std::size_t, const Var& g, const std::vector<bool>& want) {
        const Var x = input(node, g, 0);
        const Var y = input(node, g, 1);
        std::vector<Var> out(2);
        if (!ta && !tb) {
          if (want[0]) out[0] = matmul(g, y, false, true);
          if (want[1]) out[1] = matmul(x, g, true, false);
        } else if (ta && !tb) {
          if (want[0]) out[0] = matmul(y, g, false, true);
          if (want[1]) out[1] = matmul(x, g, false, false);
        } else if (!ta && tb) {
          if (want[0]) out[0] = matmul(g, y, false, false);
          if (want[1]) out[1] = matmul(g, x, true, false);
        } else {
          if (want[0]) out[0] = matmul(y, g, true, true);
          if (want[1]) out[1] = matmul(g, x, true, true);
        }
        return out;
      },
      "matmul");
}

Var add(const Var& a, const Var& b) {
  require_same_shape("add", a, b);
  Tensor v(a.rows(), a.cols());
  auto x = a.value().data();
  auto y = b.value().data();
  auto o = v.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  return a.tape().record(
      std::move(v), {a, b},
      [](const Node&, std::size_t, const Var& g, const std::vector<bool>&) {
        return std::vector<Var>{g, g};
      },
      "add");
}

Var subtract(const Var& a, const Var& b) {
  require_same_shape("subtract", a, b);
  Tensor v(a.rows(), a.cols());
  auto x = a.value().data();
  auto y = b.value().data();
  auto o = v.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
  return a.tape().record(
      std::move(v), {a, b},
      [](const Node&, std::size_t, const Var& g, const std::vector<bool>& want) {
        return std::vector<Var>{g, want[1] ? scale(g, -1.0) : Var()};
      },
      "subtract");
}

Var multiply(const Var& a, const Var& b) {
  require_same_shape("multiply", a, b);
  Tensor v(a.rows(), a.cols());
  auto x = a.value().data();
  auto y = b.value().data();
  auto o = v.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  return a.tape().record(
      std::move(v), {a, b},
      [](const Node& node, std::size_t, const Var& g, const std::vector<bool>& want) {
        std::vector<Var> out(2);
        if (want[0]) out[0] = multiply(g, input(node, g, 1));
        if (want[1]) out[1] = multiply(g, input(node, g, 0));
        return out;
      },
      "multiply");
}

Var scale(const Var& a, double factor) {
  Tensor v = map_values(a.value(), [factor](double x) { return factor * x; });
  return a.tape().record(
      std::move(v), {a},
      [factor](const Node&, std::size_t, const Var& g, const std::vector<bool>&) {
        return std::vector<Var>{scale(g, factor)};
      },
      "scale");
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const std::size_t rows = parts.front().rows();
  std::size_t total = 0;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    if (p.rows() != rows) shape_error("concat", parts.front().value(), p.value());
    if (&p.tape() != &parts.front().tape()) throw AutodiffError("concat: inputs on different tapes");
    offsets.push_back(total);
    total += p.cols();
  }
  Tensor v(rows, total);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& src = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(src.data().begin() + r * src.cols(), src.cols(),
                  v.data().begin() + r * total + offsets[k]);
    }
  }
  std::vector<std::size_t> widths;
  for (const Var& p : parts) widths.push_back(p.cols());
  return parts.front().tape().record(
      std::move(v), parts,
      [offsets, widths](const Node&, std::size_t, const Var& g, const std::vector<bool>& want) {
        std::vector<Var> out(widths.size());
        for (std::size_t k = 0; k < widths.size(); ++k) {
          if (want[k]) out[k] = slice_cols(g, offsets[k], widths[k]);
        }
        return out;
      },
      "concat");
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t count) {
  const Tensor& src = a.value();
  if (begin + count > src.cols()) {
    throw ShapeError("slice_cols: columns [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of " + src.shape_string());
  }
  Tensor v(src.rows(), count);
  for (std::size_t r = 0; r < src.rows(); ++r) {
    std::copy_n(src.data().begin() + r * src.cols() + begin, count, v.data().begin() + r * count);
  }
  const std::size_t total = src.cols();
  return a.tape().record(
      std::move(v), {a},
      [begin, total](const Node&, std::size_t, const Var& g, const std::vector<bool>&) {
        return std::vector<Var>{pad_cols(g, begin, total)};
      },
      "slice_cols");
}

Var pad_cols(const Var& a, std::size_t begin, std::size_t total) {
  const Tensor& src = a.value();
  if (begin + src.cols() > total) {
    throw ShapeError("pad_cols: " + src.shape_string() + " does not fit at column " +
                     std::to_string(begin) + " of " + std::to_string(total));
  }
  Tensor v(src.rows(), total);
  for (std::size_t r = 0; r < src.rows(); ++r) {
    std::copy_n(src.data().begin() + r * src.cols(), src.cols(),
                v.data().begin() + r * total + begin);
  }
  const std::size_t count = src.cols();
  return a.tape().record(
      std::move(v), {a},
      [begin, count](const Node&, std::size_t, const Var& g, const std::vector<bool>&) {
        return std::vector<Var>{slice_cols(g, begin, count)};
      },
      "pad_cols");
}

Var sum(const Var& a) {
  const auto d = a.value().data();
  const double s = std::accumulate(d.begin(), d.end(), 0.0);
  const std::size_t rows = a.rows();
  const std::size_t cols = a.cols();
  return a.tape().record(
      Tensor::scalar(s), {a},
      [rows, cols](const Node&, std::size_t, const Var& g, const std::vector<bool>&) {
        return std::vector<Var>{broadcast_scalar(g, rows, cols)};
      },
      "sum");
}

Var mean(const Var& a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var swish(const Var& a) {
  Tensor v = map_values(a.value(), [](double x) { return x * sigmoid(x); });
  return a.tape().record(
      std::move(v), {a},
      [](const Node& node, std::size_t, const Var& g, const std::vector<bool>&) {
        return std::vector<Var>{multiply(g, swish_prime(input(node, g, 0)))};
      },
      "swish");
}

Var softmax(const Var& a, int axis) {
  if (axis != 0 && axis != 1) throw ShapeError("softmax: axis must be 0 or 1");
  const Tensor& x = a.value();
  Tensor v(x.rows(), x.cols());
  if (axis == 1) {
    for (std::size_t r = 0; r < x.rows(); ++r) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < x.cols(); ++c) m = std::max(m, x(r, c));
      double z = 0.0;
      for (std::size_t c = 0; c < x.cols(); ++c) z += (v(r, c) = std::exp(x(r, c) - m));
      for (std::size_t c = 0; c < x.cols(); ++c) v(r, c) /= z;
    }
  } else {
    for (std::size_t c = 0; c < x.cols(); ++c) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t r = 0; r < x.rows(); ++r) m = std::max(m, x(r, c));
      double z = 0.0;
      for (std::size_t r = 0; r < x.rows(); ++r) z += (v(r, c) = std::exp(x(r, c) - m));
      for (std::size_t r = 0; r < x.rows(); ++r) v(r, c) /= z;
    }
  }
  const std::size_t rows = x.rows();
  const std::size_t cols = x.cols();
  return a.tape().record(
      std::move(v), {a},
      [axis, rows, cols](const Node&, std::size_t self, const Var& g, const std::vector<bool>&) {
        Tape& t = g.tape();
        const Var y(&t, self);
        const Var gy = multiply(g, y);
        Var expanded;
        if (axis == 1) {
          expanded = matmul(matmul(gy, ones(t, cols, 1)), ones(t, 1, cols));
        } else {
          expanded = matmul(ones(t, rows, 1), matmul(ones(t, 1, rows), gy));
        }
        return std::vector<Var>{multiply(y, subtract(g, expanded))};
      },
      "softmax");
}

Var segment_softmax(const Var& a, const Index& segments, std::size_t num_segments) {
  const Tensor& x = a.value();
  require_segments("segment_softmax", x, segments, num_segments);
  const std::size_t cols = x.cols();
  Tensor maxes(num_segments, cols, -std::numeric_limits<double>::infinity());
  const auto& seg = *segments;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < cols; ++c) maxes(seg[r], c) = std::max(maxes(seg[r], c), x(r, c));
  }
  Tensor totals(num_segments, cols);
  Tensor v(x.rows(), cols);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      v(r, c) = std::exp(x(r, c) - maxes(seg[r], c));
      totals(seg[r], c) += v(r, c);
    }
  }
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < cols; ++c) v(r, c) /= totals(seg[r], c);
  }
  return a.tape().record(
      std::move(v), {a},
      [segments, num_segments](const Node&, std::size_t self, const Var& g,
                               const std::vector<bool>&) {
        const Var y(&g.tape(), self);
        const Var totals_g = segment_sum(multiply(g, y), segments, num_segments);
        return std::vector<Var>{multiply(y, subtract(g, gather(totals_g, segments)))};
      },
      "segment_softmax");
}

Var segment_sum(const Var& a, const Index& segments, std::size_t num_segments) {
  const Tensor& x = a.value();
  require_segments("segment_sum", x, segments, num_segments);
  const std::size_t cols = x.cols();
  Tensor v(num_segments, cols);
  const auto& seg = *segments;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double* src = x.data().data() + r * cols;
    double* dst = v.data().data() + seg[r] * cols;
    for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
  }
  return a.tape().record(
      std::move(v), {a},
      [segments](const Node&, std::size_t, const Var& g, const std::vector<bool>&) {
        return std::vector<Var>{gather(g, segments)};
      },
      "segment_sum");
}

Var gather(const Var& a, const Index& rows) {
  const Tensor& x = a.value();
  if (!rows) throw ShapeError("gather: null index");
  const std::size_t cols = x.cols();
  Tensor v(rows->size(), cols);
  for (std::size_t r = 0; r < rows->size(); ++r) {
    const std::size_t src = (*rows)[r];
    if (src >= x.rows()) {
      throw ShapeError("gather: row " + std::to_string(src) + " out of " + x.shape_string());
    }
    std::copy_n(x.data().begin() + src * cols, cols, v.data().begin() + r * cols);
  }
  const std::size_t source_rows = x.rows();
  return a.tape().record(
      std::move(v), {a},
      [rows, source_rows](const Node&, std::size_t, const Var& g, const std::vector<bool>&) {
        return std::vector<Var>{segment_sum(g, rows, source_rows)};
      },
      "gather");
}

Var square(const Var& a) {
  return a.tape().record(
      map_values(a.value(), [](double x) { return x * x; }), {a},
      [](const Node& node, std::size_t, const Var& g, const std::vector<bool>&) {
        return std::vector<Var>{multiply(g, scale(input(node, g, 0), 2.0))};
      },
      "square");
}

Var sqrt(const Var& a) {
  return a.tape().record(
      map_values(a.value(), [](double x) { return std::sqrt(x); }), {a},
      [](const Node&, std::size_t self, const Var& g, const std::vector<bool>&) {
        return std::vector<Var>{multiply(g, scale(reciprocal(Var(&g.tape(), self)), 0.5))};
      },
      "sqrt");
}

Var log(const Var& a) {
  return a.tape().record(
      map_values(a.value(), [](double x) { return std::log(x); }), {a},
      [](const Node& node, std::size_t, const Var& g, const std::vector<bool>&) {
        return std::vector<Var>{multiply(g, reciprocal(input(node, g, 0)))};
      },
      "log");
}

Var exp(const Var& a) {
  return a.tape().record(
      map_values(a.value(), [](double x) { return std::exp(x); }), {a},
      [](const Node&, std::size_t self, const Var& g, const std::vector<bool>&) {
        return std::vector<Var>{multiply(g, Var(&g.tape(), self))};
      },
      "exp");
}

Var reciprocal(const Var& a) {
  return a.tape().record(
      map_values(a.value(), [](double x) { return 1.0 / x; }), {a},
      [](const Node&, std::size_t self, const Var& g, const std::vector<bool>&) {
        return std::vector<Var>{scale(multiply(g, square(Var(&g.tape(), self))), -1.0)};
      },
      "reciprocal");
}

Var expand_rows(const Var& row, std::size_t n) {
  if (row.rows() != 1) throw ShapeError("expand_rows: expected a single row, got " +
                                        row.value().shape_string());
  return gather(row, zeros_index(n));
}

// ---------------------------------------------------------------------------
// Differentiation

std::vector<Tensor> backward(const Var& root, std::span<const Var> leaves) {
  if (!root.valid()) throw AutodiffError("backward: invalid root");
  if (root.value().size() != 1) {
    throw AutodiffError("backward: root must be scalar, got " + root.value().shape_string());
  }
  Tape& tape = root.tape();
  const std::size_t mark = tape.size();
  std::vector<char> active(root.id() + 1);
  for (std::size_t i = 0; i <= root.id(); ++i) active[i] = tape.node(i).requires_grad ? 1 : 0;
  std::vector<Tensor> result;
  {
    NoGradGuard guard(tape);
    const Var seed = tape.constant(Tensor::scalar(1.0));
    std::vector<Var> grads = tape.sweep(root, seed, active, false);
    result.reserve(leaves.size());
    for (const Var& leaf : leaves) {
      if (leaf.id() <= root.id() && grads[leaf.id()].valid()) {
        result.push_back(grads[leaf.id()].value());
      } else {
        result.emplace_back(leaf.rows(), leaf.cols());
      }
    }
  }
  tape.truncate(mark);
  return result;
}

Var vjp(const Var& output, const Var& cotangent, const Var& wrt, bool create_graph) {
  if (cotangent.rows() != output.rows() || cotangent.cols() != output.cols()) {
    throw ShapeError("vjp: cotangent " + cotangent.value().shape_string() + " != output " +
                     output.value().shape_string());
  }
  if (&wrt.tape() != &output.tape() || wrt.id() >= output.tape().size()) {
    throw AutodiffError("vjp: input is not on the output's tape");
  }
  Tape& tape = output.tape();
  if (wrt.id() > output.id() || !wrt.requires_grad()) {
    NoGradGuard guard(tape);
    return tape.constant(Tensor(wrt.rows(), wrt.cols()));
  }
  std::vector<char> active(output.id() + 1, 0);
  active[wrt.id()] = 1;
  for (std::size_t i = wrt.id() + 1; i <= output.id(); ++i) {
    for (std::size_t p : tape.node(i).inputs) {
      if (active[p]) {
        active[i] = 1;
        break;
      }
    }
  }
  std::vector<Var> grads = tape.sweep(output, cotangent, active, create_graph);
  if (grads[wrt.id()].valid()) return grads[wrt.id()];
  NoGradGuard guard(tape);
  return tape.constant(Tensor(wrt.rows(), wrt.cols()));
}

Tensor vjp(const Var& output, const Tensor& cotangent, const Var& wrt) {
  Tape& tape = output.tape();
  const std::size_t mark = tape.size();
  Tensor result;
  {
    NoGradGuard guard(tape);
    const Var seed = tape.constant(cotangent);
    result = vjp(output, seed, wrt, false).value();
  }
  tape.truncate(mark);
  return result;
}

}  // namespace molflow::ad
