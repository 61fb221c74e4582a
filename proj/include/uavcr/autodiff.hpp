#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "uavcr/errors.hpp"

namespace uavcr::ad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class Tape;

// Handle to a node on a Tape. Only meaningful for the tape that created it.
class Var {
 public:
  Var() = default;
  int id() const { return id_; }

 private:
  friend class Tape;
  explicit Var(int id) : id_(id) {}
  int id_ = -1;
};

// Reverse-mode differentiation over dense double matrices. Operations are
// recorded in evaluation order; backward() walks them in reverse and
// accumulates gradients into the buffers registered with parameter().
//
// A tape constructed with record = false only evaluates (no closures, no
// gradient storage), which is how target-network and acting passes run.
class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) { nodes_.reserve(256); }

  Var constant(Matrix value) { return push(std::move(value), false); }

  // Leaf whose gradient is added into *grad on backward(). A null grad makes
  // the leaf a constant.
  Var parameter(const Matrix& value, Matrix* grad) {
    const bool track = record_ && grad != nullptr;
    Var v = push(value, track);
    if (track) nodes_[v.id_].sink = grad;
    return v;
  }

  const Matrix& value(Var v) const { return nodes_.at(v.id_).value; }
  const Matrix& grad(Var v) const { return nodes_.at(v.id_).grad; }

  // a * b
  Var matmul(Var a, Var b) {
    Matrix out = value(a) * value(b);
    return record(std::move(out), {a, b}, [this, a, b](int self) {
      const Matrix& g = nodes_[self].grad;
      if (tracks(a)) accumulate(a, g * value(b).transpose());
      if (tracks(b)) accumulate(b, value(a).transpose() * g);
    });
  }

  // a * b^T
  Var matmul_nt(Var a, Var b) {
    Matrix out = value(a) * value(b).transpose();
    return record(std::move(out), {a, b}, [this, a, b](int self) {
      const Matrix& g = nodes_[self].grad;
      if (tracks(a)) accumulate(a, g * value(b));
      if (tracks(b)) accumulate(b, g.transpose() * value(a));
    });
  }

  // Adds a 1 x cols row vector to every row of a.
  Var add_row(Var a, Var row) {
    if (value(row).rows() != 1 || value(row).cols() != value(a).cols()) {
      throw DomainError("add_row: bias shape mismatch");
    }
    Matrix out = value(a).rowwise() + value(row).row(0);
    return record(std::move(out), {a, row}, [this, a, row](int self) {
      const Matrix& g = nodes_[self].grad;
      if (tracks(a)) accumulate(a, g);
      if (tracks(row)) accumulate(row, g.colwise().sum());
    });
  }

  Var relu(Var a) {
    Matrix out = value(a).cwiseMax(0.0);
    return record(std::move(out), {a}, [this, a](int self) {
      const Matrix& g = nodes_[self].grad;
      accumulate(a, (value(a).array() > 0.0).cast<double>().matrix().cwiseProduct(g));
    });
  }

  // Horizontal concatenation of matrices with equal row counts.
  Var hcat(std::span<const Var> parts) {
    if (parts.empty()) throw DomainError("hcat: no inputs");
    const Eigen::Index rows = value(parts[0]).rows();
    Eigen::Index cols = 0;
    for (Var p : parts) {
      if (value(p).rows() != rows) throw DomainError("hcat: row count mismatch");
      cols += value(p).cols();
    }
    Matrix out(rows, cols);
    Eigen::Index c = 0;
    for (Var p : parts) {
      out.middleCols(c, value(p).cols()) = value(p);
      c += value(p).cols();
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    return record(std::move(out), inputs, [this, inputs](int self) {
      Eigen::Index off = 0;
      for (Var p : inputs) {
        const Eigen::Index w = value(p).cols();
        if (tracks(p)) accumulate(p, nodes_[self].grad.middleCols(off, w));
        off += w;
      }
    });
  }

  // Row-wise softmax of scale * scores restricted to entries where mask is
  // nonzero. Masked-out entries are exactly zero.
  Var masked_softmax(Var scores, const Matrix& mask, double scale) {
    const Matrix& s = value(scores);
    if (mask.rows() != s.rows() || mask.cols() != s.cols()) throw DomainError("masked_softmax: mask shape mismatch");
    Matrix out = Matrix::Zero(s.rows(), s.cols());
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < s.cols(); ++j)
        if (mask(i, j) != 0.0) mx = std::max(mx, scale * s(i, j));
      if (!std::isfinite(mx)) continue;
      double sum = 0.0;
      for (Eigen::Index j = 0; j < s.cols(); ++j) {
        if (mask(i, j) == 0.0) continue;
        const double e = std::exp(scale * s(i, j) - mx);
        out(i, j) = e;
        sum += e;
      }
      out.row(i) /= sum;
    }
    return record(std::move(out), {scores}, [this, scores, scale](int self) {
      const Matrix& alpha = nodes_[self].value;
      const Matrix& g = nodes_[self].grad;
      const Vector inner = alpha.cwiseProduct(g).rowwise().sum();
      Matrix d = alpha.cwiseProduct(g - inner.replicate(1, g.cols())) * scale;
      accumulate(scores, d);
    });
  }

  // Column vector whose r-th entry is a(r, cols[r]).
  Var pick(Var a, std::span<const int> cols) {
    const Matrix& m = value(a);
    if (static_cast<Eigen::Index>(cols.size()) != m.rows()) throw DomainError("pick: one column index per row");
    Matrix out(m.rows(), 1);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      if (cols[r] < 0 || cols[r] >= m.cols()) throw DomainError("pick: column index out of range");
      out(r, 0) = m(r, cols[r]);
    }
    std::vector<int> idx(cols.begin(), cols.end());
    return record(std::move(out), {a}, [this, a, idx](int self) {
      const Matrix& g = nodes_[self].grad;
      Matrix d = Matrix::Zero(value(a).rows(), value(a).cols());
      for (Eigen::Index r = 0; r < d.rows(); ++r) d(r, idx[r]) = g(r, 0);
      accumulate(a, d);
    });
  }

  // 1x1 result: sum_r weights[r] * (target[r] - pred[r])^2, pred a column.
  Var weighted_squared_error(Var pred, const Vector& target, const Vector& weights) {
    const Matrix& p = value(pred);
    if (p.cols() != 1 || p.rows() != target.size() || p.rows() != weights.size()) {
      throw DomainError("weighted_squared_error: shape mismatch");
    }
    const Vector diff = p.col(0) - target;
    Matrix out(1, 1);
    out(0, 0) = weights.dot(diff.cwiseProduct(diff));
    return record(std::move(out), {pred}, [this, pred, diff, weights](int self) {
      const double g = nodes_[self].grad(0, 0);
      accumulate(pred, Matrix(2.0 * g * weights.cwiseProduct(diff)));
    });
  }

  // Seeds d(out)/d(out) = 1 for a 1x1 output and propagates to every tracked
  // parameter.
  void backward(Var out) {
    if (!record_) throw StateError("backward: tape was created without recording");
    Node& root = nodes_.at(out.id_);
    if (root.value.size() != 1) throw DomainError("backward: output must be a scalar");
    if (!root.tracked) return;
    root.grad = Matrix::Ones(1, 1);
    for (int id = out.id_; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.tracked || n.grad.size() == 0) continue;
      if (n.back) n.back(id);
      if (n.sink) {
        if (n.sink->size() == 0) *n.sink = Matrix::Zero(n.value.rows(), n.value.cols());
        *n.sink += n.grad;
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::function<void(int)> back;
    Matrix* sink = nullptr;
    bool tracked = false;
  };

  Var push(Matrix value, bool tracked) {
    nodes_.push_back(Node{std::move(value), Matrix(), {}, nullptr, tracked});
    return Var(static_cast<int>(nodes_.size()) - 1);
  }

  bool tracks(Var v) const { return nodes_[v.id_].tracked; }

  template <class Back>
  Var record(Matrix value, std::initializer_list<Var> inputs, Back&& back) {
    return record(std::move(value), std::vector<Var>(inputs), std::forward<Back>(back));
  }

  template <class Back>
  Var record(Matrix value, const std::vector<Var>& inputs, Back&& back) {
    bool tracked = false;
    if (record_)
      for (Var in : inputs) tracked = tracked || tracks(in);
    Var v = push(std::move(value), tracked);
    if (tracked) nodes_[v.id_].back = std::forward<Back>(back);
    return v;
  }

  template <class Derived>
  void accumulate(Var v, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[v.id_];
    if (!n.tracked) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  bool record_;
  std::vector<Node> nodes_;
};

}  // namespace uavcr::ad
