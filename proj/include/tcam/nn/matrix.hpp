#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "tcam/errors.hpp"

namespace tcam::nn {

using Index = Eigen::Index;

/// Dense row-major 2-D tensor. Scalars are 1x1, vectors are 1xN rows.
template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// True when no entry is NaN or infinite: x * 0 is NaN exactly for those.
template <class T>
bool all_finite(const Matrix<T>& m) {
  const T* p = m.data();
  const Index n = m.size();
  T acc0 = 0, acc1 = 0, acc2 = 0, acc3 = 0;
  Index i = 0;
  for (; i + 4 <= n; i += 4) {
    acc0 += p[i] * T(0);
    acc1 += p[i + 1] * T(0);
    acc2 += p[i + 2] * T(0);
    acc3 += p[i + 3] * T(0);
  }
  for (; i < n; ++i) acc0 += p[i] * T(0);
  return (acc0 + acc1 + acc2 + acc3) == T(0);
}

template <class T>
void require_finite(const Matrix<T>& m, const char* what) {
  if (!all_finite(m)) {
    throw NumericError(std::string("non-finite value produced by ") + what);
  }
}

template <class T>
Matrix<T> scalar_matrix(T v) {
  Matrix<T> m(1, 1);
  m(0, 0) = v;
  return m;
}

inline std::string shape_string(Index rows, Index cols) {
  return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

template <class T>
std::string shape_string(const Matrix<T>& m) {
  return shape_string(m.rows(), m.cols());
}

/// Row indices sorted lexicographically by row contents; equal rows keep
/// their relative order.
template <class T>
std::vector<Index> canonical_row_order(const Matrix<T>& m) {
  std::vector<Index> order(static_cast<std::size_t>(m.rows()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    const T* x = m.data() + a * m.cols();
    const T* y = m.data() + b * m.cols();
    return std::lexicographical_compare(x, x + m.cols(), y, y + m.cols());
  });
  return order;
}

inline std::vector<Index> inverse_permutation(const std::vector<Index>& p) {
  std::vector<Index> inv(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) inv[static_cast<std::size_t>(p[i])] = static_cast<Index>(i);
  return inv;
}

}  // namespace tcam::nn
