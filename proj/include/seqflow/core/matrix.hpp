#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "seqflow/core/error.hpp"

namespace seqflow {

// Dense storage is row-major throughout so that a batch of samples is a
// contiguous block of rows.
template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

using MatrixD = Matrix<double>;
using VectorD = Vector<double>;
using MatrixF = Matrix<float>;
using VectorF = Vector<float>;

template <class T>
using ConstRowMap = Eigen::Map<const Vector<T>>;

template <class Derived>
void require_finite(const Eigen::DenseBase<Derived>& m, const std::string& what) {
  if (m.allFinite()) return;
  const auto flat = m.derived().template reshaped<Eigen::RowMajor>();
  for (Eigen::Index i = 0; i < flat.size(); ++i) {
    if (!std::isfinite(static_cast<double>(flat(i)))) throw NumericError(what + ": non-finite value", i);
  }
}

template <class T>
void require_finite(std::span<const T> v, const std::string& what) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(static_cast<double>(v[i]))) {
      throw NumericError(what + ": non-finite value", static_cast<std::ptrdiff_t>(i));
    }
  }
}

inline void require_dim(const std::string& what, std::size_t expected, std::size_t actual) {
  if (expected != actual) throw DimensionError(what, expected, actual);
}

template <class T>
std::vector<T> to_std(const Vector<T>& v) {
  return std::vector<T>(v.data(), v.data() + v.size());
}

template <class T>
Vector<T> from_std(std::span<const T> v) {
  Vector<T> out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[i];
  return out;
}

// Symmetrizes in place; returns the largest asymmetry seen before the fix.
inline double symmetrize(MatrixD& m) {
  const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
  m = 0.5 * (m + m.transpose()).eval();
  return asym;
}

}  // namespace seqflow
