#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "tcam/nn/tape.hpp"

namespace tcam::nn {

namespace detail {

enum class Broadcast { Same, Row, Col, Scalar };

template <class T>
Broadcast broadcast_kind(const Matrix<T>& a, const Matrix<T>& b, const char* op) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::Same;
  if (b.rows() == 1 && b.cols() == 1) return Broadcast::Scalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::Row;
  if (b.cols() == 1 && b.rows() == a.rows()) return Broadcast::Col;
  throw NumericError(std::string(op) + ": cannot broadcast " + shape_string(b) + " onto " +
                     shape_string(a));
}

template <class T>
Matrix<T> expand(const Matrix<T>& b, Index rows, Index cols, Broadcast kind) {
  switch (kind) {
    case Broadcast::Same: return b;
    case Broadcast::Row: return b.replicate(rows, 1);
    case Broadcast::Col: return b.replicate(1, cols);
    case Broadcast::Scalar: return Matrix<T>::Constant(rows, cols, b(0, 0));
  }
  return b;
}

template <class T>
Matrix<T> reduce(const Matrix<T>& g, Broadcast kind) {
  switch (kind) {
    case Broadcast::Same: return g;
    case Broadcast::Row: return g.colwise().sum();
    case Broadcast::Col: return g.rowwise().sum();
    case Broadcast::Scalar: return scalar_matrix<T>(g.sum());
  }
  return g;
}

template <class T>
void same_tape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (!a.valid() || !b.valid() || a.tape() != b.tape()) {
    throw NumericError(std::string(op) + ": operands must live on the same tape");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  detail::same_tape(a, b, "matmul");
  if (a.cols() != b.rows()) {
    throw NumericError("matmul: " + shape_string(a.value()) + " x " + shape_string(b.value()));
  }
  Matrix<T> out;
  out.noalias() = a.value() * b.value();
  const auto ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, std::size_t self) {
    const Matrix<T>& g = t.grad(self);
    if (t.needs_grad(ia)) t.add_grad(ia, g * t.value(ib).transpose());
    if (t.needs_grad(ib)) t.add_grad(ib, t.value(ia).transpose() * g);
  }, "matmul");
}

/// x w + b with b a (1 x out) row.
template <class T>
Var<T> affine(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  detail::same_tape(x, w, "affine");
  detail::same_tape(x, b, "affine");
  if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols()) {
    throw NumericError("affine: " + shape_string(x.value()) + " x " + shape_string(w.value()) +
                       " + " + shape_string(b.value()));
  }
  Matrix<T> out(x.rows(), w.cols());
  out.noalias() = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  const auto ix = x.id(), iw = w.id(), ib = b.id();
  return x.tape()->record(std::move(out), {x, w, b}, [ix, iw, ib](Tape<T>& t, std::size_t self) {
    const Matrix<T>& g = t.grad(self);
    if (t.needs_grad(ix)) t.add_grad(ix, g * t.value(iw).transpose());
    if (t.needs_grad(iw)) t.add_grad(iw, t.value(ix).transpose() * g);
    if (t.needs_grad(ib)) t.add_grad(ib, g.colwise().sum());
  }, "affine");
}

/// a * b^T
template <class T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  detail::same_tape(a, b, "matmul_nt");
  if (a.cols() != b.cols()) {
    throw NumericError("matmul_nt: " + shape_string(a.value()) + " x " +
                       shape_string(b.value()) + "^T");
  }
  Matrix<T> out;
  out.noalias() = a.value() * b.value().transpose();
  const auto ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, std::size_t self) {
    const Matrix<T>& g = t.grad(self);
    if (t.needs_grad(ia)) t.add_grad(ia, g * t.value(ib));
    if (t.needs_grad(ib)) t.add_grad(ib, g.transpose() * t.value(ia));
  }, "matmul_nt");
}

template <class T>
Var<T> transpose(const Var<T>& a) {
  const auto ia = a.id();
  return a.tape()->record(a.value().transpose(), {a}, [ia](Tape<T>& t, std::size_t self) {
    t.grad(ia) += t.grad(self).transpose();
  }, "transpose");
}

// ---------------------------------------------------------------------------
// Broadcasting arithmetic. The second operand may match in shape, or be a
// row (1xC), a column (Rx1) or a scalar (1x1).

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::same_tape(a, b, "add");
  const auto kind = detail::broadcast_kind(a.value(), b.value(), "add");
  Matrix<T> out;
  if (kind == detail::Broadcast::Same) {
    out = a.value() + b.value();
  } else if (kind == detail::Broadcast::Row) {
    out = a.value();
    out.rowwise() += b.value().row(0);
  } else {
    out = a.value() + detail::expand(b.value(), a.rows(), a.cols(), kind);
  }
  const auto ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib, kind](Tape<T>& t, std::size_t self) {
    const Matrix<T>& g = t.grad(self);
    if (t.needs_grad(ia)) t.add_grad(ia, g);
    if (t.needs_grad(ib)) {
      if (kind == detail::Broadcast::Same) t.add_grad(ib, g);
      else t.add_grad(ib, detail::reduce(g, kind));
    }
  }, "add");
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::same_tape(a, b, "sub");
  const auto kind = detail::broadcast_kind(a.value(), b.value(), "sub");
  Matrix<T> out = a.value() - detail::expand(b.value(), a.rows(), a.cols(), kind);
  const auto ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib, kind](Tape<T>& t, std::size_t self) {
    const Matrix<T>& g = t.grad(self);
    if (t.needs_grad(ia)) t.grad(ia) += g;
    if (t.needs_grad(ib)) t.grad(ib) -= detail::reduce(g, kind);
  }, "sub");
}

/// Elementwise product with broadcasting of `b`.
template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::same_tape(a, b, "mul");
  const auto kind = detail::broadcast_kind(a.value(), b.value(), "mul");
  Matrix<T> out = a.value().cwiseProduct(detail::expand(b.value(), a.rows(), a.cols(), kind));
  const auto ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib, kind](Tape<T>& t, std::size_t self) {
    const Matrix<T>& g = t.grad(self);
    const Matrix<T>& av = t.value(ia);
    if (t.needs_grad(ia)) {
      t.grad(ia) += g.cwiseProduct(detail::expand(t.value(ib), av.rows(), av.cols(), kind));
    }
    if (t.needs_grad(ib)) t.grad(ib) += detail::reduce<T>(g.cwiseProduct(av), kind);
  }, "mul");
}

template <class T>
Var<T> scale(const Var<T>& a, T c) {
  const auto ia = a.id();
  return a.tape()->record(a.value() * c, {a}, [ia, c](Tape<T>& t, std::size_t self) {
    t.add_grad(ia, t.grad(self) * c);
  }, "scale");
}

template <class T>
Var<T> add_scalar(const Var<T>& a, T c) {
  const auto ia = a.id();
  Matrix<T> out = a.value().array() + c;
  return a.tape()->record(std::move(out), {a}, [ia](Tape<T>& t, std::size_t self) {
    t.grad(ia) += t.grad(self);
  }, "add_scalar");
}

template <class T>
Var<T> neg(const Var<T>& a) {
  return scale(a, T(-1));
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities

template <class T>
Var<T> relu(const Var<T>& a) {
  const auto ia = a.id();
  Matrix<T> out = a.value().cwiseMax(T(0));
  return a.tape()->record(std::move(out), {a}, [ia](Tape<T>& t, std::size_t self) {
    t.grad(ia).array() +=
        t.grad(self).array() * (t.value(ia).array() > T(0)).template cast<T>();
  }, "relu");
}

/// tanh-approximated GELU.
template <class T>
Var<T> gelu(const Var<T>& a) {
  constexpr T k = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T c = T(0.044715);
  const auto& x = a.value().array();
  Matrix<T> th = (k * (x + c * x.cube())).tanh().matrix();
  Matrix<T> out = (T(0.5) * x * (T(1) + th.array())).matrix();
  const auto ia = a.id();
  return a.tape()->record(std::move(out), {a},
                          [ia, k, c, th = std::move(th)](Tape<T>& t, std::size_t self) {
    const auto& xv = t.value(ia).array();
    const auto dinner = k * (T(1) + T(3) * c * xv.square());
    const auto d = T(0.5) * (T(1) + th.array()) +
                   T(0.5) * xv * (T(1) - th.array().square()) * dinner;
    t.grad(ia).array() += t.grad(self).array() * d;
  }, "gelu");
}

template <class T>
Var<T> tanh(const Var<T>& a) {
  const auto ia = a.id();
  Matrix<T> out = a.value().array().tanh().matrix();
  return a.tape()->record(std::move(out), {a}, [ia](Tape<T>& t, std::size_t self) {
    const auto& y = t.value(self).array();
    t.grad(ia).array() += t.grad(self).array() * (T(1) - y.square());
  }, "tanh");
}

template <class T>
Var<T> exp(const Var<T>& a) {
  const auto ia = a.id();
  Matrix<T> out = a.value().array().exp().matrix();
  return a.tape()->record(std::move(out), {a}, [ia](Tape<T>& t, std::size_t self) {
    t.grad(ia).array() += t.grad(self).array() * t.value(self).array();
  }, "exp");
}

template <class T>
Var<T> log(const Var<T>& a) {
  if ((a.value().array() <= T(0)).any()) throw NumericError("log: non-positive argument");
  const auto ia = a.id();
  Matrix<T> out = a.value().array().log().matrix();
  return a.tape()->record(std::move(out), {a}, [ia](Tape<T>& t, std::size_t self) {
    t.grad(ia).array() += t.grad(self).array() / t.value(ia).array();
  }, "log");
}

template <class T>
Var<T> sigmoid(const Var<T>& a) {
  const auto ia = a.id();
  Matrix<T> out = (T(1) / (T(1) + (-a.value().array()).exp())).matrix();
  return a.tape()->record(std::move(out), {a}, [ia](Tape<T>& t, std::size_t self) {
    const auto& y = t.value(self).array();
    t.grad(ia).array() += t.grad(self).array() * y * (T(1) - y);
  }, "sigmoid");
}

/// Subgradient 0 at the origin.
template <class T>
Var<T> abs(const Var<T>& a) {
  const auto ia = a.id();
  Matrix<T> out = a.value().cwiseAbs();
  return a.tape()->record(std::move(out), {a}, [ia](Tape<T>& t, std::size_t self) {
    t.grad(ia).array() += t.grad(self).array() * t.value(ia).array().sign();
  }, "abs");
}

template <class T>
Var<T> square(const Var<T>& a) {
  const auto ia = a.id();
  Matrix<T> out = a.value().array().square().matrix();
  return a.tape()->record(std::move(out), {a}, [ia](Tape<T>& t, std::size_t self) {
    t.grad(ia).array() += t.grad(self).array() * T(2) * t.value(ia).array();
  }, "square");
}

/// Gradient is taken as 0 where the output is exactly 0.
template <class T>
Var<T> sqrt(const Var<T>& a) {
  if ((a.value().array() < T(0)).any()) throw NumericError("sqrt: negative argument");
  const auto ia = a.id();
  Matrix<T> out = a.value().array().sqrt().matrix();
  return a.tape()->record(std::move(out), {a}, [ia](Tape<T>& t, std::size_t self) {
    const auto& y = t.value(self).array();
    t.grad(ia).array() += (y > T(0)).select(t.grad(self).array() / (T(2) * y), T(0));
  }, "sqrt");
}

/// Elementwise a^e for a >= 0. Gradient at a = 0 is taken as 0.
template <class T>
Var<T> pow_scalar(const Var<T>& a, T e) {
  if ((a.value().array() < T(0)).any()) throw NumericError("pow_scalar: negative base");
  const auto ia = a.id();
  Matrix<T> out = a.value().array().pow(e).matrix();
  return a.tape()->record(std::move(out), {a}, [ia, e](Tape<T>& t, std::size_t self) {
    const auto& x = t.value(ia).array();
    t.grad(ia).array() +=
        (x > T(0)).select(t.grad(self).array() * e * x.pow(e - T(1)), T(0));
  }, "pow_scalar");
}

/// Clamp into [lo, hi]; zero gradient where clamped.
template <class T>
Var<T> clamp(const Var<T>& a, T lo, T hi) {
  const auto ia = a.id();
  Matrix<T> out = a.value().cwiseMax(lo).cwiseMin(hi);
  return a.tape()->record(std::move(out), {a}, [ia, lo, hi](Tape<T>& t, std::size_t self) {
    const auto& x = t.value(ia).array();
    t.grad(ia).array() += ((x >= lo) && (x <= hi)).select(t.grad(self).array(), T(0));
  }, "clamp");
}

// ---------------------------------------------------------------------------
// Reductions and reshaping

template <class T>
Var<T> sum(const Var<T>& a) {
  const auto ia = a.id();
  return a.tape()->record(scalar_matrix<T>(a.value().sum()), {a},
                          [ia](Tape<T>& t, std::size_t self) {
    t.grad(ia).array() += t.grad(self)(0, 0);
  }, "sum");
}

template <class T>
Var<T> mean(const Var<T>& a) {
  const T n = static_cast<T>(a.value().size());
  return scale(sum(a), T(1) / n);
}

/// Column means: (R x C) -> (1 x C).
template <class T>
Var<T> mean_rows(const Var<T>& a) {
  const auto ia = a.id();
  const T inv = T(1) / static_cast<T>(a.rows());
  Matrix<T> out = a.value().colwise().sum() * inv;
  return a.tape()->record(std::move(out), {a}, [ia, inv](Tape<T>& t, std::size_t self) {
    t.grad(ia).rowwise() += t.grad(self).row(0) * inv;
  }, "mean_rows");
}

/// Row sums: (R x C) -> (R x 1).
template <class T>
Var<T> sum_cols(const Var<T>& a) {
  const auto ia = a.id();
  Matrix<T> out = a.value().rowwise().sum();
  return a.tape()->record(std::move(out), {a}, [ia](Tape<T>& t, std::size_t self) {
    t.grad(ia).colwise() += t.grad(self).col(0);
  }, "sum_cols");
}

/// Mean over consecutive row groups: (G*L x C) -> (G x C).
template <class T>
Var<T> group_mean_rows(const Var<T>& a, Index group) {
  if (group <= 0 || a.rows() % group != 0) {
    throw NumericError("group_mean_rows: rows not divisible by group size");
  }
  const Index groups = a.rows() / group;
  const T inv = T(1) / static_cast<T>(group);
  Matrix<T> out(groups, a.cols());
  for (Index g = 0; g < groups; ++g) {
    out.row(g) = a.value().middleRows(g * group, group).colwise().sum() * inv;
  }
  const auto ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia, group, groups, inv](Tape<T>& t, std::size_t self) {
    const Matrix<T>& g = t.grad(self);
    Matrix<T>& ga = t.grad(ia);
    for (Index k = 0; k < groups; ++k) {
      ga.middleRows(k * group, group).rowwise() += g.row(k) * inv;
    }
  }, "group_mean_rows");
}

template <class T>
Var<T> slice_rows(const Var<T>& a, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > a.rows()) {
    throw NumericError("slice_rows: range out of bounds");
  }
  const auto ia = a.id();
  return a.tape()->record(a.value().middleRows(begin, count), {a},
                          [ia, begin, count](Tape<T>& t, std::size_t self) {
    t.grad(ia).middleRows(begin, count) += t.grad(self);
  }, "slice_rows");
}

template <class T>
Var<T> slice_cols(const Var<T>& a, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > a.cols()) {
    throw NumericError("slice_cols: range out of bounds");
  }
  const auto ia = a.id();
  return a.tape()->record(a.value().middleCols(begin, count), {a},
                          [ia, begin, count](Tape<T>& t, std::size_t self) {
    t.grad(ia).middleCols(begin, count) += t.grad(self);
  }, "slice_cols");
}

template <class T>
Var<T> select_cols(const Var<T>& a, std::vector<Index> cols) {
  Matrix<T> out(a.rows(), static_cast<Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    if (cols[j] < 0 || cols[j] >= a.cols()) throw NumericError("select_cols: index out of range");
    out.col(static_cast<Index>(j)) = a.value().col(cols[j]);
  }
  const auto ia = a.id();
  return a.tape()->record(std::move(out), {a},
                          [ia, cols = std::move(cols)](Tape<T>& t, std::size_t self) {
    const Matrix<T>& g = t.grad(self);
    Matrix<T>& ga = t.grad(ia);
    for (std::size_t j = 0; j < cols.size(); ++j) ga.col(cols[j]) += g.col(static_cast<Index>(j));
  }, "select_cols");
}

/// out.row(i) = a.row(rows[i]); rows may repeat (gradients scatter-add).
template <class T>
Var<T> gather_rows(const Var<T>& a, std::vector<Index> rows) {
  Matrix<T> out(static_cast<Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= a.rows()) throw NumericError("gather_rows: index out of range");
    out.row(static_cast<Index>(i)) = a.value().row(rows[i]);
  }
  const auto ia = a.id();
  return a.tape()->record(std::move(out), {a},
                          [ia, rows = std::move(rows)](Tape<T>& t, std::size_t self) {
    const Matrix<T>& g = t.grad(self);
    Matrix<T>& ga = t.grad(ia);
    for (std::size_t i = 0; i < rows.size(); ++i) ga.row(rows[i]) += g.row(static_cast<Index>(i));
  }, "gather_rows");
}

template <class T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
  if (parts.empty()) throw NumericError("concat_rows: no operands");
  Index rows = 0;
  const Index cols = parts[0].cols();
  for (const auto& p : parts) {
    if (p.cols() != cols) throw NumericError("concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix<T> out(rows, cols);
  std::vector<std::pair<std::size_t, Index>> spans;
  Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    spans.emplace_back(p.id(), at);
    at += p.rows();
  }
  return parts[0].tape()->record(std::move(out), parts,
                                 [spans = std::move(spans)](Tape<T>& t, std::size_t self) {
    const Matrix<T>& g = t.grad(self);
    for (const auto& [id, begin] : spans) {
      if (t.needs_grad(id)) t.grad(id) += g.middleRows(begin, t.value(id).rows());
    }
  }, "concat_rows");
}

/// (i, j) = a_i - b_j for rows a (1 x M) and b (1 x N).
template <class T>
Var<T> pairwise_sub(const Var<T>& a, const Var<T>& b) {
  detail::same_tape(a, b, "pairwise_sub");
  if (a.rows() != 1 || b.rows() != 1) throw NumericError("pairwise_sub: operands must be rows");
  Matrix<T> out = a.value().transpose().replicate(1, b.cols()) - b.value().replicate(a.cols(), 1);
  const auto ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, std::size_t self) {
    const Matrix<T>& g = t.grad(self);
    if (t.needs_grad(ia)) t.grad(ia) += g.rowwise().sum().transpose();
    if (t.needs_grad(ib)) t.grad(ib) -= g.colwise().sum();
  }, "pairwise_sub");
}

// ---------------------------------------------------------------------------
// Row-wise normalizers

/// Stabilized log(sum(exp(row))): (R x C) -> (R x 1).
template <class T>
Var<T> logsumexp_rows(const Var<T>& a) {
  const Matrix<T>& x = a.value();
  Matrix<T> out(x.rows(), 1);
  Matrix<T> soft(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const T m = x.row(r).maxCoeff();
    if (m == -std::numeric_limits<T>::infinity()) {
      throw NumericError("logsumexp: row of all -inf");
    }
    soft.row(r) = (x.row(r).array() - m).exp().matrix();
    const T s = soft.row(r).sum();
    soft.row(r) /= s;
    out(r, 0) = m + std::log(s);
  }
  const auto ia = a.id();
  return a.tape()->record(std::move(out), {a},
                          [ia, soft = std::move(soft)](Tape<T>& t, std::size_t self) {
    const Matrix<T>& g = t.grad(self);
    t.grad(ia).array() += soft.array().colwise() * g.col(0).array();
  }, "logsumexp_rows");
}

template <class T>
Var<T> softmax_rows(const Var<T>& a) {
  const Matrix<T>& x = a.value();
  Matrix<T> out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const T m = x.row(r).maxCoeff();
    if (m == -std::numeric_limits<T>::infinity()) {
      throw NumericError("softmax: row of all -inf");
    }
    out.row(r) = (x.row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  const auto ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia](Tape<T>& t, std::size_t self) {
    const Matrix<T>& y = t.value(self);
    const Matrix<T>& g = t.grad(self);
    Matrix<T> dot = g.cwiseProduct(y).rowwise().sum();
    t.grad(ia).array() += y.array() * (g.array().colwise() - dot.col(0).array());
  }, "softmax_rows");
}

/// L2-normalizes each contiguous `block`-wide segment of every row.
/// `block` = 0 means the whole row. A zero-norm segment is an error.
template <class T>
Var<T> normalize_rows(const Var<T>& a, Index block = 0, const char* what = "normalize_rows") {
  const Matrix<T>& x = a.value();
  const Index width = block == 0 ? x.cols() : block;
  if (width <= 0 || x.cols() % width != 0) throw NumericError("normalize_rows: bad block width");
  const Index blocks = x.cols() / width;
  Matrix<T> out(x.rows(), x.cols());
  Matrix<T> norms(x.rows(), blocks);
  for (Index r = 0; r < x.rows(); ++r) {
    for (Index b = 0; b < blocks; ++b) {
      const T n = x.row(r).segment(b * width, width).norm();
      if (!(n > T(0))) throw NumericError(std::string(what) + ": zero-norm vector");
      norms(r, b) = n;
      out.row(r).segment(b * width, width) = x.row(r).segment(b * width, width) / n;
    }
  }
  const auto ia = a.id();
  return a.tape()->record(std::move(out), {a},
                          [ia, width, blocks, norms = std::move(norms)](Tape<T>& t, std::size_t self) {
    const Matrix<T>& y = t.value(self);
    const Matrix<T>& g = t.grad(self);
    Matrix<T>& ga = t.grad(ia);
    for (Index r = 0; r < y.rows(); ++r) {
      for (Index b = 0; b < blocks; ++b) {
        const auto yb = y.row(r).segment(b * width, width);
        const auto gb = g.row(r).segment(b * width, width);
        const T d = gb.dot(yb);
        ga.row(r).segment(b * width, width) += (gb - d * yb) / norms(r, b);
      }
    }
  }, "normalize_rows");
}

/// Per-row layer normalization with affine gamma/beta rows (1 x C).
template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  detail::same_tape(x, gamma, "layer_norm");
  detail::same_tape(x, beta, "layer_norm");
  const Index c = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != c || beta.rows() != 1 || beta.cols() != c) {
    throw NumericError("layer_norm: affine parameters must be 1x" + std::to_string(c));
  }
  const Matrix<T>& xv = x.value();
  Matrix<T> xhat(xv.rows(), c);
  Matrix<T> inv_std(xv.rows(), 1);
  for (Index r = 0; r < xv.rows(); ++r) {
    const T mu = xv.row(r).mean();
    const auto centered = (xv.row(r).array() - mu).eval();
    const T var = centered.square().mean();
    const T inv = T(1) / std::sqrt(var + eps);
    if (!std::isfinite(inv)) throw NumericError("layer_norm: zero variance with eps = 0");
    inv_std(r, 0) = inv;
    xhat.row(r) = (centered * inv).matrix();
  }
  Matrix<T> out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
                  beta.value().row(0).array();
  const auto ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.tape()->record(
      std::move(out), {x, gamma, beta},
      [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& t,
                                                                       std::size_t self) {
        const Matrix<T>& g = t.grad(self);
        if (t.needs_grad(ig)) t.grad(ig) += g.cwiseProduct(xhat).colwise().sum();
        if (t.needs_grad(ib)) t.grad(ib) += g.colwise().sum();
        if (t.needs_grad(ix)) {
          const auto& gamma_row = t.value(ig).row(0).array();
          Matrix<T> dxhat = (g.array().rowwise() * gamma_row).matrix();
          const T inv_c = T(1) / static_cast<T>(xhat.cols());
          Matrix<T> mean_d = dxhat.rowwise().sum() * inv_c;
          Matrix<T> mean_dx = dxhat.cwiseProduct(xhat).rowwise().sum() * inv_c;
          Matrix<T>& gx = t.grad(ix);
          for (Index r = 0; r < xhat.rows(); ++r) {
            gx.row(r).array() += inv_std(r, 0) * (dxhat.row(r).array() - mean_d(r, 0) -
                                                  xhat.row(r).array() * mean_dx(r, 0));
          }
        }
      },
      "layer_norm");
}

/// Scaled dot-product attention, heads split along columns. Rows of q are
/// grouped in `q_group` consecutive blocks and attend only to the matching
/// `k_group` block of k/v (group count must agree). With a single group this
/// is ordinary full attention.
template <class T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, Index heads, Index q_group,
                 Index k_group) {
  detail::same_tape(q, k, "attention");
  detail::same_tape(q, v, "attention");
  const Index d = q.cols();
  if (k.cols() != d || v.cols() != d) throw NumericError("attention: width mismatch");
  if (k.rows() != v.rows()) throw NumericError("attention: keys and values differ in count");
  if (heads <= 0 || d % heads != 0) {
    throw NumericError("attention: " + std::to_string(heads) + " heads do not divide width " +
                       std::to_string(d));
  }
  if (q_group <= 0 || k_group <= 0 || q.rows() % q_group != 0 || k.rows() % k_group != 0 ||
      q.rows() / q_group != k.rows() / k_group) {
    throw NumericError("attention: inconsistent grouping");
  }
  const Index groups = q.rows() / q_group;
  const Index dh = d / heads;
  const T scale_factor = T(1) / std::sqrt(static_cast<T>(dh));
  const Matrix<T>& qv = q.value();
  const Matrix<T>& kv = k.value();
  const Matrix<T>& vv = v.value();

  // probs holds one (q_group x k_group) block per (group, head).
  Matrix<T> probs(groups * heads * q_group, k_group);
  Matrix<T> out(q.rows(), d);
  Matrix<T> s(q_group, k_group);
  for (Index g = 0; g < groups; ++g) {
    for (Index h = 0; h < heads; ++h) {
      const auto qb = qv.block(g * q_group, h * dh, q_group, dh);
      const auto kb = kv.block(g * k_group, h * dh, k_group, dh);
      const auto vb = vv.block(g * k_group, h * dh, k_group, dh);
      s.noalias() = qb * kb.transpose();
      s *= scale_factor;
      for (Index r = 0; r < q_group; ++r) {
        const T m = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - m).exp().matrix();
        s.row(r) /= s.row(r).sum();
      }
      probs.middleRows((g * heads + h) * q_group, q_group) = s;
      out.block(g * q_group, h * dh, q_group, dh).noalias() = s * vb;
    }
  }
  const auto iq = q.id(), ik = k.id(), iv = v.id();
  return q.tape()->record(
      std::move(out), {q, k, v},
      [iq, ik, iv, heads, q_group, k_group, groups, dh, scale_factor,
       probs = std::move(probs)](Tape<T>& t, std::size_t self) {
        const Matrix<T>& go = t.grad(self);
        const Matrix<T>& qv = t.value(iq);
        const Matrix<T>& kv = t.value(ik);
        const Matrix<T>& vv = t.value(iv);
        const bool need_q = t.needs_grad(iq), need_k = t.needs_grad(ik), need_v = t.needs_grad(iv);
        Matrix<T>* gq = need_q ? &t.grad(iq) : nullptr;
        Matrix<T>* gk = need_k ? &t.grad(ik) : nullptr;
        Matrix<T>* gv = need_v ? &t.grad(iv) : nullptr;
        Matrix<T> dp(q_group, k_group);
        for (Index g = 0; g < groups; ++g) {
          for (Index h = 0; h < heads; ++h) {
            const auto p = probs.middleRows((g * heads + h) * q_group, q_group);
            const auto gob = go.block(g * q_group, h * dh, q_group, dh);
            const auto vb = vv.block(g * k_group, h * dh, k_group, dh);
            if (need_v) gv->block(g * k_group, h * dh, k_group, dh).noalias() += p.transpose() * gob;
            if (!need_q && !need_k) continue;
            dp.noalias() = gob * vb.transpose();
            for (Index r = 0; r < q_group; ++r) {
              const T dot = dp.row(r).dot(p.row(r));
              dp.row(r) = (p.row(r).array() * (dp.row(r).array() - dot)).matrix();
            }
            dp *= scale_factor;
            if (need_q) {
              gq->block(g * q_group, h * dh, q_group, dh).noalias() +=
                  dp * kv.block(g * k_group, h * dh, k_group, dh);
            }
            if (need_k) {
              gk->block(g * k_group, h * dh, k_group, dh).noalias() +=
                  dp.transpose() * qv.block(g * q_group, h * dh, q_group, dh);
            }
          }
        }
      },
      "attention");
}

}  // namespace tcam::nn
