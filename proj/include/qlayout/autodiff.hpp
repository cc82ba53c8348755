#pragma once

// Reverse-mode differentiation over dense Eigen matrices.
//
// A Tape owns every intermediate value of one forward pass. Primitives are
// free functions taking and returning Var handles; each records its value
// and a backward rule that pushes the output gradient to its operands.
// Nodes are appended in evaluation order, so walking the tape backwards is a
// reverse topological order.
//
// Broadcasting is limited to the row/column helpers (add_row, mul_row,
// mul_col); everything else requires exact shape agreement.

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "qlayout/error.hpp"

namespace qlayout::ad {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

// Boolean mask; `true` marks an entry to overwrite.
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

using Index = Eigen::Index;

template <typename Scalar>
class BasicTape;

template <typename Scalar>
class BasicVar {
 public:
  using Matrix = MatrixX<Scalar>;

  BasicVar() = default;
  BasicVar(BasicTape<Scalar>* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& value() const { return tape_->value(id_); }
  // Gradient after backward(); zeros if nothing flowed into this node.
  Matrix grad() const { return tape_->grad(id_); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Scalar item() const { return value()(0, 0); }

  BasicTape<Scalar>& tape() const { return *tape_; }
  int id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  BasicTape<Scalar>* tape_ = nullptr;
  int id_ = -1;
};

template <typename Scalar>
class BasicTape {
 public:
  using Matrix = MatrixX<Scalar>;
  using Var = BasicVar<Scalar>;
  using Backward = std::function<void(BasicTape&, const Matrix&)>;

  BasicTape() = default;
  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;

  Var constant(Matrix value) { return push(std::move(value), false, {}); }
  Var variable(Matrix value) { return push(std::move(value), true, {}); }

  // Records an operation. The backward rule is kept only if some operand
  // requires a gradient.
  Var record(Matrix value, std::initializer_list<Var> operands, Backward rule) {
    bool needs = false;
    for (const Var& v : operands) needs = needs || nodes_[v.id()].requires_grad;
    return push(std::move(value), needs, needs ? std::move(rule) : Backward{});
  }
  Var record(Matrix value, const std::vector<Var>& operands, Backward rule) {
    bool needs = false;
    for (const Var& v : operands) needs = needs || nodes_[v.id()].requires_grad;
    return push(std::move(value), needs, needs ? std::move(rule) : Backward{});
  }

  const Matrix& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  Matrix grad(int id) const {
    const Node& n = nodes_[id];
    if (n.has_grad) return n.grad;
    return Matrix::Zero(n.value.rows(), n.value.cols());
  }

  // Adds `g` into the gradient slot of `id`; a no-op for constants.
  template <typename Derived>
  void accumulate(int id, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
      n.grad = g;
      n.has_grad = true;
    } else {
      n.grad += g;
    }
  }

  // Mutable gradient slot (zero-initialized) for sparse accumulation.
  Matrix* grad_slot(int id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return nullptr;
    if (!n.has_grad) {
      n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
      n.has_grad = true;
    }
    return &n.grad;
  }

  /// Seeds d(root)/d(root) = 1 and runs every backward rule from `root`
  /// down to the first node, each at most once. Returns how many rules ran.
  int backward(const Var& root) {
    if (root.rows() != 1 || root.cols() != 1) {
      throw ShapeError("backward needs a 1x1 root, got " + std::to_string(root.rows()) + "x" +
                       std::to_string(root.cols()));
    }
    for (Node& n : nodes_) n.has_grad = false;
    accumulate(root.id(), Matrix::Ones(1, 1));
    int ran = 0;
    for (int id = root.id(); id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.backward && n.has_grad) {
        n.backward(*this, n.grad);
        ++ran;
      }
    }
    return ran;
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool has_grad = false;
    Backward backward;
  };

  Var push(Matrix value, bool requires_grad, Backward rule) {
    nodes_.push_back(Node{std::move(value), Matrix(), requires_grad, false, std::move(rule)});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
  }

  // deque keeps element addresses stable while the forward pass appends.
  std::deque<Node> nodes_;
};

using Tape = BasicTape<double>;
using Var = BasicVar<double>;
using Matrix = MatrixX<double>;

namespace detail {

inline std::string shape_str(Index r, Index c) {
  return "[" + std::to_string(r) + "x" + std::to_string(c) + "]";
}

template <typename Scalar>
void require_same_shape(const char* op, const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.rows(), a.cols()) +
                     " vs " + shape_str(b.rows(), b.cols()));
  }
}

template <typename Scalar>
void require_same_tape(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  if (&a.tape() != &b.tape()) throw InvalidArgument("operands live on different tapes");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <typename Scalar>
BasicVar<Scalar> matmul(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  detail::require_same_tape(a, b);
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + detail::shape_str(a.rows(), a.cols()) +
                     " * " + detail::shape_str(b.rows(), b.cols()));
  }
  const int ia = a.id(), ib = b.id();
  return a.tape().record(a.value() * b.value(), {a, b},
                         [ia, ib](BasicTape<Scalar>& t, const MatrixX<Scalar>& g) {
                           if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
                           if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
                         });
}

// a * b^T
template <typename Scalar>
BasicVar<Scalar> matmul_nt(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  detail::require_same_tape(a, b);
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: column counts differ " + detail::shape_str(a.rows(), a.cols()) +
                     " vs " + detail::shape_str(b.rows(), b.cols()));
  }
  const int ia = a.id(), ib = b.id();
  return a.tape().record(a.value() * b.value().transpose(), {a, b},
                         [ia, ib](BasicTape<Scalar>& t, const MatrixX<Scalar>& g) {
                           if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib));
                           if (t.requires_grad(ib)) t.accumulate(ib, g.transpose() * t.value(ia));
                         });
}

template <typename Scalar>
BasicVar<Scalar> transpose(const BasicVar<Scalar>& a) {
  const int ia = a.id();
  return a.tape().record(a.value().transpose(), {a},
                         [ia](BasicTape<Scalar>& t, const MatrixX<Scalar>& g) {
                           t.accumulate(ia, g.transpose());
                         });
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <typename Scalar>
BasicVar<Scalar> add(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape("add", a, b);
  const int ia = a.id(), ib = b.id();
  return a.tape().record(a.value() + b.value(), {a, b},
                         [ia, ib](BasicTape<Scalar>& t, const MatrixX<Scalar>& g) {
                           t.accumulate(ia, g);
                           t.accumulate(ib, g);
                         });
}

template <typename Scalar>
BasicVar<Scalar> sub(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape("sub", a, b);
  const int ia = a.id(), ib = b.id();
  return a.tape().record(a.value() - b.value(), {a, b},
                         [ia, ib](BasicTape<Scalar>& t, const MatrixX<Scalar>& g) {
                           t.accumulate(ia, g);
                           t.accumulate(ib, -g);
                         });
}

template <typename Scalar>
BasicVar<Scalar> mul(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape("mul", a, b);
  const int ia = a.id(), ib = b.id();
  return a.tape().record(a.value().cwiseProduct(b.value()), {a, b},
                         [ia, ib](BasicTape<Scalar>& t, const MatrixX<Scalar>& g) {
                           if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
                           if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
                         });
}

template <typename Scalar>
BasicVar<Scalar> div(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape("div", a, b);
  const int ia = a.id(), ib = b.id();
  return a.tape().record(a.value().cwiseQuotient(b.value()), {a, b},
                         [ia, ib](BasicTape<Scalar>& t, const MatrixX<Scalar>& g) {
                           const auto& bv = t.value(ib);
                           if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseQuotient(bv));
                           if (t.requires_grad(ib)) {
                             t.accumulate(ib, (-g.array() * t.value(ia).array() /
                                               bv.array().square())
                                                  .matrix());
                           }
                         });
}

template <typename Scalar>
BasicVar<Scalar> scale(const BasicVar<Scalar>& a, Scalar s) {
  const int ia = a.id();
  return a.tape().record(a.value() * s, {a},
                         [ia, s](BasicTape<Scalar>& t, const MatrixX<Scalar>& g) {
                           t.accumulate(ia, g * s);
                         });
}

template <typename Scalar>
BasicVar<Scalar> add_scalar(const BasicVar<Scalar>& a, Scalar s) {
  const int ia = a.id();
  return a.tape().record((a.value().array() + s).matrix(), {a},
                         [ia](BasicTape<Scalar>& t, const MatrixX<Scalar>& g) {
                           t.accumulate(ia, g);
                         });
}

template <typename Scalar>
BasicVar<Scalar> operator+(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  return add(a, b);
}
template <typename Scalar>
BasicVar<Scalar> operator-(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  return sub(a, b);
}

// a + 1 r, with r a 1 x cols row broadcast down the rows.
template <typename Scalar>
BasicVar<Scalar> add_row(const BasicVar<Scalar>& a, const BasicVar<Scalar>& row) {
  detail::require_same_tape(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError("add_row: " + detail::shape_str(a.rows(), a.cols()) + " + row " +
                     detail::shape_str(row.rows(), row.cols()));
  }
  const int ia = a.id(), ir = row.id();
  MatrixX<Scalar> out = a.value().rowwise() + row.value().row(0);
  return a.tape().record(std::move(out), {a, row},
                         [ia, ir](BasicTape<Scalar>& t, const MatrixX<Scalar>& g) {
                           t.accumulate(ia, g);
                           if (t.requires_grad(ir)) t.accumulate(ir, g.colwise().sum());
                         });
}

// a diag(r): every row scaled entrywise by the 1 x cols row r.
template <typename Scalar>
BasicVar<Scalar> mul_row(const BasicVar<Scalar>& a, const BasicVar<Scalar>& row) {
  detail::require_same_tape(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError("mul_row: " + detail::shape_str(a.rows(), a.cols()) + " * row " +
                     detail::shape_str(row.rows(), row.cols()));
  }
  const int ia = a.id(), ir = row.id();
  MatrixX<Scalar> out = a.value().array().rowwise() * row.value().row(0).array();
  return a.tape().record(
      std::move(out), {a, row}, [ia, ir](BasicTape<Scalar>& t, const MatrixX<Scalar>& g) {
        if (t.requires_grad(ia)) {
          t.accumulate(ia, (g.array().rowwise() * t.value(ir).row(0).array()).matrix());
        }
        if (t.requires_grad(ir)) t.accumulate(ir, g.cwiseProduct(t.value(ia)).colwise().sum());
      });
}

// diag(c) a: every column scaled entrywise by the rows x 1 column c.
template <typename Scalar>
BasicVar<Scalar> mul_col(const BasicVar<Scalar>& a, const BasicVar<Scalar>& col) {
  detail::require_same_tape(a, col);
  if (col.cols() != 1 || col.rows() != a.rows()) {
    throw ShapeError("mul_col: " + detail::shape_str(a.rows(), a.cols()) + " * col " +
                     detail::shape_str(col.rows(), col.cols()));
  }
  const int ia = a.id(), ic = col.id();
  MatrixX<Scalar> out = a.value().array().colwise() * col.value().col(0).array();
  return a.tape().record(
      std::move(out), {a, col}, [ia, ic](BasicTape<Scalar>& t, const MatrixX<Scalar>& g) {
        if (t.requires_grad(ia)) {
          t.accumulate(ia, (g.array().colwise() * t.value(ic).col(0).array()).matrix());
        }
        if (t.requires_grad(ic)) t.accumulate(ic, g.cwiseProduct(t.value(ia)).rowwise().sum());
      });
}

// ---------------------------------------------------------------------------
// Nonlinearities
// ---------------------------------------------------------------------------

template <typename Scalar>
BasicVar<Scalar> tanh(const BasicVar<Scalar>& a) {
  const int ia = a.id();
  MatrixX<Scalar> out = a.value().array().tanh().matrix();
  const int io = static_cast<int>(a.tape().size());
  return a.tape().record(std::move(out), {a},
                         [ia, io](BasicTape<Scalar>& t, const MatrixX<Scalar>& g) {
                           t.accumulate(ia, (g.array() * (1 - t.value(io).array().square())).matrix());
                         });
}

template <typename Scalar>
BasicVar<Scalar> exp(const BasicVar<Scalar>& a) {
  const int ia = a.id();
  MatrixX<Scalar> out = a.value().array().exp().matrix();
  const int io = static_cast<int>(a.tape().size());
  return a.tape().record(std::move(out), {a},
                         [ia, io](BasicTape<Scalar>& t, const MatrixX<Scalar>& g) {
                           t.accumulate(ia, g.cwiseProduct(t.value(io)));
                         });
}

template <typename Scalar>
BasicVar<Scalar> log(const BasicVar<Scalar>& a) {
  const int ia = a.id();
  return a.tape().record(a.value().array().log().matrix(), {a},
                         [ia](BasicTape<Scalar>& t, const MatrixX<Scalar>& g) {
                           t.accumulate(ia, g.cwiseQuotient(t.value(ia)));
                         });
}

template <typename Scalar>
BasicVar<Scalar> sqrt(const BasicVar<Scalar>& a) {
  const int ia = a.id();
  MatrixX<Scalar> out = a.value().array().sqrt().matrix();
  const int io = static_cast<int>(a.tape().size());
  return a.tape().record(std::move(out), {a},
                         [ia, io](BasicTape<Scalar>& t, const MatrixX<Scalar>& g) {
                           t.accumulate(ia, (g.array() / (2 * t.value(io).array())).matrix());
                         });
}

template <typename Scalar>
BasicVar<Scalar> leaky_relu(const BasicVar<Scalar>& a, Scalar slope) {
  const int ia = a.id();
  MatrixX<Scalar> out = a.value().unaryExpr([slope](Scalar x) { return x > 0 ? x : slope * x; });
  return a.tape().record(std::move(out), {a},
                         [ia, slope](BasicTape<Scalar>& t, const MatrixX<Scalar>& g) {
                           MatrixX<Scalar> d = t.value(ia).unaryExpr(
                               [slope](Scalar x) { return x > 0 ? Scalar(1) : slope; });
                           t.accumulate(ia, g.cwiseProduct(d));
                         });
}

// alpha = 1
template <typename Scalar>
BasicVar<Scalar> elu(const BasicVar<Scalar>& a) {
  const int ia = a.id();
  MatrixX<Scalar> out = a.value().unaryExpr([](Scalar x) { return x > 0 ? x : std::expm1(x); });
  return a.tape().record(std::move(out), {a},
                         [ia](BasicTape<Scalar>& t, const MatrixX<Scalar>& g) {
                           MatrixX<Scalar> d = t.value(ia).unaryExpr(
                               [](Scalar x) { return x > 0 ? Scalar(1) : std::exp(x); });
                           t.accumulate(ia, g.cwiseProduct(d));
                         });
}

// ---------------------------------------------------------------------------
// Reductions and normalization
// ---------------------------------------------------------------------------

template <typename Scalar>
BasicVar<Scalar> sum(const BasicVar<Scalar>& a) {
  const int ia = a.id();
  const Index r = a.rows(), c = a.cols();
  MatrixX<Scalar> out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape().record(std::move(out), {a},
                         [ia, r, c](BasicTape<Scalar>& t, const MatrixX<Scalar>& g) {
                           t.accumulate(ia, MatrixX<Scalar>::Constant(r, c, g(0, 0)));
                         });
}

template <typename Scalar>
BasicVar<Scalar> mean(const BasicVar<Scalar>& a) {
  if (a.value().size() == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), Scalar(1) / static_cast<Scalar>(a.value().size()));
}

// 1 x cols
template <typename Scalar>
BasicVar<Scalar> col_sums(const BasicVar<Scalar>& a) {
  const int ia = a.id();
  const Index r = a.rows();
  return a.tape().record(a.value().colwise().sum(), {a},
                         [ia, r](BasicTape<Scalar>& t, const MatrixX<Scalar>& g) {
                           t.accumulate(ia, g.replicate(r, 1));
                         });
}

// rows x 1
template <typename Scalar>
BasicVar<Scalar> row_sums(const BasicVar<Scalar>& a) {
  const int ia = a.id();
  const Index c = a.cols();
  return a.tape().record(a.value().rowwise().sum(), {a},
                         [ia, c](BasicTape<Scalar>& t, const MatrixX<Scalar>& g) {
                           t.accumulate(ia, g.replicate(1, c));
                         });
}

struct NormStats {
  Matrix mean;      // 1 x cols (batch) or rows x 1 (layer)
  Matrix variance;  // biased
};

// Per-column mean and biased variance over the rows.
template <typename Scalar>
NormStats batch_norm_stats(const MatrixX<Scalar>& x) {
  NormStats s;
  s.mean = x.colwise().mean().template cast<double>();
  s.variance = (x.rowwise() - x.colwise().mean()).array().square().colwise().mean().matrix()
                   .template cast<double>();
  return s;
}

// Per-row mean and biased variance over the columns.
template <typename Scalar>
NormStats layer_norm_stats(const MatrixX<Scalar>& x) {
  NormStats s;
  s.mean = x.rowwise().mean().template cast<double>();
  s.variance = (x.colwise() - x.rowwise().mean()).array().square().rowwise().mean().matrix()
                   .template cast<double>();
  return s;
}

namespace detail {

// Normalizes each row of x to zero mean and unit variance.
template <typename Scalar>
MatrixX<Scalar> normalize_rows_value(const MatrixX<Scalar>& x, Scalar eps,
                                     Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& inv_std) {
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mu = x.rowwise().mean();
  MatrixX<Scalar> centered = x.colwise() - mu;
  inv_std = (centered.array().square().rowwise().mean() + eps).rsqrt().matrix();
  return centered.array().colwise() * inv_std.array();
}

template <typename Scalar>
MatrixX<Scalar> normalize_rows_backward(const MatrixX<Scalar>& g, const MatrixX<Scalar>& xhat,
                                        const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& inv_std) {
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> g_mean = g.rowwise().mean();
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> gx_mean = g.cwiseProduct(xhat).rowwise().mean();
  MatrixX<Scalar> out = (g.colwise() - g_mean) - MatrixX<Scalar>(xhat.array().colwise() *
                                                                 gx_mean.array());
  return out.array().colwise() * inv_std.array();
}

}  // namespace detail

/// Layer normalization without affine terms: each row to zero mean, unit variance.
template <typename Scalar>
BasicVar<Scalar> normalize_rows(const BasicVar<Scalar>& a, Scalar eps) {
  const int ia = a.id();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std;
  MatrixX<Scalar> out = detail::normalize_rows_value<Scalar>(a.value(), eps, inv_std);
  const int io = static_cast<int>(a.tape().size());
  return a.tape().record(std::move(out), {a},
                         [ia, io, inv_std](BasicTape<Scalar>& t, const MatrixX<Scalar>& g) {
                           t.accumulate(ia, detail::normalize_rows_backward<Scalar>(
                                                g, t.value(io), inv_std));
                         });
}

/// Batch normalization without affine terms: each column over the rows.
template <typename Scalar>
BasicVar<Scalar> normalize_cols(const BasicVar<Scalar>& a, Scalar eps) {
  const int ia = a.id();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std;
  const MatrixX<Scalar> xt = a.value().transpose();
  MatrixX<Scalar> out = detail::normalize_rows_value<Scalar>(xt, eps, inv_std).transpose();
  const int io = static_cast<int>(a.tape().size());
  return a.tape().record(std::move(out), {a},
                         [ia, io, inv_std](BasicTape<Scalar>& t, const MatrixX<Scalar>& g) {
                           const MatrixX<Scalar> gt = g.transpose();
                           const MatrixX<Scalar> xhat_t = t.value(io).transpose();
                           t.accumulate(ia, detail::normalize_rows_backward<Scalar>(gt, xhat_t, inv_std)
                                                .transpose());
                         });
}

// ---------------------------------------------------------------------------
// Softmax and masking
// ---------------------------------------------------------------------------

// Row-wise softmax. Entries equal to -inf get probability exactly 0.
template <typename Scalar>
BasicVar<Scalar> softmax_rows(const BasicVar<Scalar>& a) {
  const int ia = a.id();
  const auto& x = a.value();
  MatrixX<Scalar> p(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const Scalar m = x.row(r).maxCoeff();
    p.row(r) = (x.row(r).array() - m).exp().matrix();
    p.row(r) /= p.row(r).sum();
  }
  const int io = static_cast<int>(a.tape().size());
  return a.tape().record(std::move(p), {a},
                         [ia, io](BasicTape<Scalar>& t, const MatrixX<Scalar>& g) {
                           const auto& p = t.value(io);
                           const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dot =
                               g.cwiseProduct(p).rowwise().sum();
                           t.accumulate(ia, MatrixX<Scalar>(p.array() * (g.colwise() - dot).array()));
                         });
}

// Row-wise log-softmax. Entries equal to -inf stay -inf and receive no gradient.
template <typename Scalar>
BasicVar<Scalar> log_softmax_rows(const BasicVar<Scalar>& a) {
  const int ia = a.id();
  const auto& x = a.value();
  MatrixX<Scalar> out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const Scalar m = x.row(r).maxCoeff();
    const Scalar lse = m + std::log((x.row(r).array() - m).exp().sum());
    out.row(r) = x.row(r).array() - lse;
  }
  const int io = static_cast<int>(a.tape().size());
  return a.tape().record(std::move(out), {a},
                         [ia, io](BasicTape<Scalar>& t, const MatrixX<Scalar>& g) {
                           const MatrixX<Scalar> p = t.value(io).array().exp().matrix();
                           const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> gs = g.rowwise().sum();
                           t.accumulate(ia, MatrixX<Scalar>(g - MatrixX<Scalar>(p.array().colwise() *
                                                                                gs.array())));
                         });
}

template <typename Scalar>
BasicVar<Scalar> masked_fill(const BasicVar<Scalar>& a, const Mask& mask, Scalar fill) {
  if (mask.rows() != a.rows() || mask.cols() != a.cols()) {
    throw ShapeError("masked_fill: tensor " + detail::shape_str(a.rows(), a.cols()) + " vs mask " +
                     detail::shape_str(mask.rows(), mask.cols()));
  }
  const int ia = a.id();
  MatrixX<Scalar> out = mask.select(MatrixX<Scalar>::Constant(a.rows(), a.cols(), fill), a.value());
  return a.tape().record(std::move(out), {a},
                         [ia, mask](BasicTape<Scalar>& t, const MatrixX<Scalar>& g) {
                           t.accumulate(ia, MatrixX<Scalar>(mask.select(MatrixX<Scalar>::Zero(g.rows(), g.cols()), g)));
                         });
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

template <typename Scalar>
BasicVar<Scalar> concat_cols(const std::vector<BasicVar<Scalar>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const auto& p : parts) {
    detail::require_same_tape(parts.front(), p);
    if (p.rows() != rows) {
      throw ShapeError("concat_cols: row counts differ " + detail::shape_str(rows, parts.front().cols()) +
                       " vs " + detail::shape_str(p.rows(), p.cols()));
    }
    cols += p.cols();
  }
  MatrixX<Scalar> out(rows, cols);
  std::vector<int> ids;
  std::vector<Index> widths;
  Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
    ids.push_back(p.id());
    widths.push_back(p.cols());
  }
  return parts.front().tape().record(
      std::move(out), parts, [ids, widths](BasicTape<Scalar>& t, const MatrixX<Scalar>& g) {
        Index at = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (t.requires_grad(ids[k])) t.accumulate(ids[k], g.middleCols(at, widths[k]));
          at += widths[k];
        }
      });
}

template <typename Scalar>
BasicVar<Scalar> concat_rows(const std::vector<BasicVar<Scalar>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const auto& p : parts) {
    detail::require_same_tape(parts.front(), p);
    if (p.cols() != cols) {
      throw ShapeError("concat_rows: column counts differ " +
                       detail::shape_str(parts.front().rows(), cols) + " vs " +
                       detail::shape_str(p.rows(), p.cols()));
    }
    rows += p.rows();
  }
  MatrixX<Scalar> out(rows, cols);
  std::vector<int> ids;
  std::vector<Index> heights;
  Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
    ids.push_back(p.id());
    heights.push_back(p.rows());
  }
  return parts.front().tape().record(
      std::move(out), parts, [ids, heights](BasicTape<Scalar>& t, const MatrixX<Scalar>& g) {
        Index at = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (t.requires_grad(ids[k])) t.accumulate(ids[k], g.middleRows(at, heights[k]));
          at += heights[k];
        }
      });
}

template <typename Scalar>
BasicVar<Scalar> slice_cols(const BasicVar<Scalar>& a, Index start, Index width) {
  if (start < 0 || width < 0 || start + width > a.cols()) {
    throw ShapeError("slice_cols [" + std::to_string(start) + "," + std::to_string(start + width) +
                     ") of " + detail::shape_str(a.rows(), a.cols()));
  }
  const int ia = a.id();
  return a.tape().record(a.value().middleCols(start, width), {a},
                         [ia, start, width](BasicTape<Scalar>& t, const MatrixX<Scalar>& g) {
                           t.grad_slot(ia)->middleCols(start, width) += g;
                         });
}

// out.row(k) = a.row(idx[k])
template <typename Scalar>
BasicVar<Scalar> gather_rows(const BasicVar<Scalar>& a, std::vector<int> idx) {
  const auto& x = a.value();
  MatrixX<Scalar> out(static_cast<Index>(idx.size()), x.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] < 0 || idx[k] >= x.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(idx[k]) + " outside " +
                       detail::shape_str(x.rows(), x.cols()));
    }
    out.row(static_cast<Index>(k)) = x.row(idx[k]);
  }
  const int ia = a.id();
  return a.tape().record(std::move(out), {a},
                         [ia, idx = std::move(idx)](BasicTape<Scalar>& t, const MatrixX<Scalar>& g) {
                           auto* slot = t.grad_slot(ia);
                           for (std::size_t k = 0; k < idx.size(); ++k) {
                             slot->row(idx[k]) += g.row(static_cast<Index>(k));
                           }
                         });
}

// out.row(idx[k]) += a.row(k); out has `rows` rows.
template <typename Scalar>
BasicVar<Scalar> scatter_add_rows(const BasicVar<Scalar>& a, std::vector<int> idx, Index rows) {
  const auto& x = a.value();
  if (static_cast<Index>(idx.size()) != x.rows()) {
    throw ShapeError("scatter_add_rows: " + std::to_string(idx.size()) + " indices for " +
                     detail::shape_str(x.rows(), x.cols()));
  }
  MatrixX<Scalar> out = MatrixX<Scalar>::Zero(rows, x.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] < 0 || idx[k] >= rows) {
      throw ShapeError("scatter_add_rows: index " + std::to_string(idx[k]) + " outside " +
                       std::to_string(rows) + " rows");
    }
    out.row(idx[k]) += x.row(static_cast<Index>(k));
  }
  const int ia = a.id();
  return a.tape().record(std::move(out), {a},
                         [ia, idx = std::move(idx)](BasicTape<Scalar>& t, const MatrixX<Scalar>& g) {
                           MatrixX<Scalar> ga(static_cast<Index>(idx.size()), g.cols());
                           for (std::size_t k = 0; k < idx.size(); ++k) {
                             ga.row(static_cast<Index>(k)) = g.row(idx[k]);
                           }
                           t.accumulate(ia, ga);
                         });
}

/// Column-wise softmax within groups of rows: rows sharing segment[k] form
/// one distribution per column.
template <typename Scalar>
BasicVar<Scalar> segment_softmax(const BasicVar<Scalar>& a, std::vector<int> segment,
                                 Index num_segments) {
  const auto& x = a.value();
  if (static_cast<Index>(segment.size()) != x.rows()) {
    throw ShapeError("segment_softmax: " + std::to_string(segment.size()) + " segment ids for " +
                     detail::shape_str(x.rows(), x.cols()));
  }
  MatrixX<Scalar> maxes =
      MatrixX<Scalar>::Constant(num_segments, x.cols(), -std::numeric_limits<Scalar>::infinity());
  for (std::size_t k = 0; k < segment.size(); ++k) {
    if (segment[k] < 0 || segment[k] >= num_segments) {
      throw ShapeError("segment_softmax: segment id " + std::to_string(segment[k]) + " out of range");
    }
    maxes.row(segment[k]) = maxes.row(segment[k]).cwiseMax(x.row(static_cast<Index>(k)));
  }
  MatrixX<Scalar> p(x.rows(), x.cols());
  MatrixX<Scalar> totals = MatrixX<Scalar>::Zero(num_segments, x.cols());
  for (std::size_t k = 0; k < segment.size(); ++k) {
    const auto r = static_cast<Index>(k);
    p.row(r) = (x.row(r) - maxes.row(segment[k])).array().exp().matrix();
    totals.row(segment[k]) += p.row(r);
  }
  for (std::size_t k = 0; k < segment.size(); ++k) {
    const auto r = static_cast<Index>(k);
    p.row(r) = p.row(r).cwiseQuotient(totals.row(segment[k]));
  }
  const int ia = a.id();
  const int io = static_cast<int>(a.tape().size());
  return a.tape().record(
      std::move(p), {a},
      [ia, io, num_segments, segment = std::move(segment)](BasicTape<Scalar>& t,
                                                           const MatrixX<Scalar>& g) {
        const auto& p = t.value(io);
        const MatrixX<Scalar> pg = p.cwiseProduct(g);
        MatrixX<Scalar> dots = MatrixX<Scalar>::Zero(num_segments, g.cols());
        for (std::size_t k = 0; k < segment.size(); ++k) dots.row(segment[k]) += pg.row(static_cast<Index>(k));
        MatrixX<Scalar> ga(g.rows(), g.cols());
        for (std::size_t k = 0; k < segment.size(); ++k) {
          const auto r = static_cast<Index>(k);
          ga.row(r) = p.row(r).cwiseProduct(g.row(r) - dots.row(segment[k]));
        }
        t.accumulate(ia, ga);
      });
}

// out(k, 0) = a(rows[k], cols[k])
template <typename Scalar>
BasicVar<Scalar> pick(const BasicVar<Scalar>& a, std::vector<int> rows, std::vector<int> cols) {
  if (rows.size() != cols.size()) throw ShapeError("pick: index lists differ in length");
  const auto& x = a.value();
  MatrixX<Scalar> out(static_cast<Index>(rows.size()), 1);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] < 0 || rows[k] >= x.rows() || cols[k] < 0 || cols[k] >= x.cols()) {
      throw ShapeError("pick: (" + std::to_string(rows[k]) + "," + std::to_string(cols[k]) +
                       ") outside " + detail::shape_str(x.rows(), x.cols()));
    }
    out(static_cast<Index>(k), 0) = x(rows[k], cols[k]);
  }
  const int ia = a.id();
  return a.tape().record(std::move(out), {a},
                         [ia, rows = std::move(rows), cols = std::move(cols)](
                             BasicTape<Scalar>& t, const MatrixX<Scalar>& g) {
                           auto* slot = t.grad_slot(ia);
                           for (std::size_t k = 0; k < rows.size(); ++k) {
                             (*slot)(rows[k], cols[k]) += g(static_cast<Index>(k), 0);
                           }
                         });
}

// Sums each contiguous block of `width` columns: rows x (cols / width).
template <typename Scalar>
BasicVar<Scalar> sum_col_blocks(const BasicVar<Scalar>& a, Index width) {
  if (width <= 0 || a.cols() % width != 0) {
    throw ShapeError("sum_col_blocks: width " + std::to_string(width) + " does not divide " +
                     detail::shape_str(a.rows(), a.cols()));
  }
  const Index blocks = a.cols() / width;
  MatrixX<Scalar> out(a.rows(), blocks);
  for (Index b = 0; b < blocks; ++b) out.col(b) = a.value().middleCols(b * width, width).rowwise().sum();
  const int ia = a.id();
  return a.tape().record(std::move(out), {a},
                         [ia, width, blocks](BasicTape<Scalar>& t, const MatrixX<Scalar>& g) {
                           MatrixX<Scalar> ga(g.rows(), blocks * width);
                           for (Index b = 0; b < blocks; ++b) {
                             ga.middleCols(b * width, width) = g.col(b).replicate(1, width);
                           }
                           t.accumulate(ia, ga);
                         });
}

// Repeats every column `times` times in place: rows x (cols * times).
template <typename Scalar>
BasicVar<Scalar> repeat_each_col(const BasicVar<Scalar>& a, Index times) {
  if (times <= 0) throw ShapeError("repeat_each_col needs a positive count");
  const Index c = a.cols();
  MatrixX<Scalar> out(a.rows(), c * times);
  for (Index b = 0; b < c; ++b) out.middleCols(b * times, times) = a.value().col(b).replicate(1, times);
  const int ia = a.id();
  return a.tape().record(std::move(out), {a},
                         [ia, times, c](BasicTape<Scalar>& t, const MatrixX<Scalar>& g) {
                           MatrixX<Scalar> ga(g.rows(), c);
                           for (Index b = 0; b < c; ++b) {
                             ga.col(b) = g.middleCols(b * times, times).rowwise().sum();
                           }
                           t.accumulate(ia, ga);
                         });
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct AdamOptions {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
struct AdamState {
  long step = 0;
  std::vector<MatrixX<Scalar>> m;
  std::vector<MatrixX<Scalar>> v;
};

/// One Adam update with bias correction. Throws NumericError, leaving
/// parameters and state untouched, if any gradient entry is non-finite.
template <typename Scalar>
void adam_step(std::span<MatrixX<Scalar>> params, std::span<const MatrixX<Scalar>> grads,
               AdamState<Scalar>& state, const AdamOptions& opt) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: params and grads differ in count");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].rows() != grads[k].rows() || params[k].cols() != grads[k].cols()) {
      throw ShapeError("adam_step: parameter " + std::to_string(k) + " is " +
                       detail::shape_str(params[k].rows(), params[k].cols()) + " but gradient is " +
                       detail::shape_str(grads[k].rows(), grads[k].cols()));
    }
    if (!grads[k].allFinite()) {
      throw NumericError("adam_step: non-finite gradient for parameter " + std::to_string(k));
    }
  }
  if (state.m.size() != params.size()) {
    state.m.clear();
    state.v.clear();
    for (const auto& p : params) {
      state.m.push_back(MatrixX<Scalar>::Zero(p.rows(), p.cols()));
      state.v.push_back(MatrixX<Scalar>::Zero(p.rows(), p.cols()));
    }
  }
  ++state.step;
  const Scalar b1 = static_cast<Scalar>(opt.beta1), b2 = static_cast<Scalar>(opt.beta2);
  const Scalar c1 = 1 - std::pow(b1, static_cast<Scalar>(state.step));
  const Scalar c2 = 1 - std::pow(b2, static_cast<Scalar>(state.step));
  const Scalar lr = static_cast<Scalar>(opt.lr), eps = static_cast<Scalar>(opt.eps);
  for (std::size_t k = 0; k < params.size(); ++k) {
    state.m[k] = b1 * state.m[k] + (1 - b1) * grads[k];
    state.v[k] = b2 * state.v[k] + (1 - b2) * grads[k].cwiseProduct(grads[k]);
    params[k].array() -= lr * (state.m[k].array() / c1) / ((state.v[k].array() / c2).sqrt() + eps);
  }
}

}  // namespace qlayout::ad
