#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "seqflow/core/error.hpp"
#include "seqflow/core/matrix.hpp"
#include "seqflow/flowmatch/path.hpp"

namespace seqflow {

struct SamplerConfig {
  std::size_t nfe = 1;
  double tau_renoise = 0.3;
  std::uint64_t seed = 0;
  std::size_t nfe_init = 0;  // steps for the first prediction; 0 means nfe

  std::size_t initial_nfe() const { return nfe_init == 0 ? nfe : nfe_init; }
};

inline void validate(const SamplerConfig& c) {
  if (c.nfe < 1) throw ValidationError("sampler nfe must be >= 1");
  require_unit_interval(c.tau_renoise, "sampler tau_renoise");
}

// Forward Euler on dx/dtau = v from tau = tau_start down to 0 with `nfe`
// equal steps. `field(x, tau)` returns the velocity for every row of x.
// Iterates are formed as x_k = source - tau_start * (sum_{j<k} v_j) / nfe with
// the velocity sum kept in extended precision, so a constant field c returns
// source - tau_start * c without accumulated rounding.
template <class T, class Field>
Matrix<T> sample_ode_batch(Field&& field, Matrix<T> x, std::size_t nfe, double tau_start = 1.0) {
  if (nfe < 1) throw ValidationError("sample_ode nfe must be >= 1");
  require_unit_interval(tau_start, "sample_ode start time");
  using Acc = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Matrix<T> source = x;
  Acc sum = Acc::Zero(x.rows(), x.cols());
  const double dt = tau_start / static_cast<double>(nfe);
  const long double scale = static_cast<long double>(tau_start) / static_cast<long double>(nfe);
  for (std::size_t k = 0; k < nfe; ++k) {
    const double tau = tau_start - static_cast<double>(k) * dt;
    const Matrix<T> v = field(static_cast<const Matrix<T>&>(x), tau);
    require_dim("velocity rows", static_cast<std::size_t>(x.rows()), static_cast<std::size_t>(v.rows()));
    require_dim("velocity width", static_cast<std::size_t>(x.cols()), static_cast<std::size_t>(v.cols()));
    sum += v.template cast<long double>();
    if (tau_start == 1.0) {
      x = source - (sum / static_cast<long double>(nfe)).template cast<T>();
    } else {
      x = source - (sum * scale).template cast<T>();
    }
    if (!x.allFinite()) throw NumericError("sample_ode: non-finite state at step " + std::to_string(k), static_cast<long>(k));
  }
  return x;
}

// Single-vector form; `field(x, tau)` maps a vector to a vector.
template <class T, class Field>
Vector<T> sample_ode(Field&& field, const Vector<T>& source, std::size_t nfe, double tau_start = 1.0) {
  Matrix<T> x = source.transpose();
  auto batch_field = [&](const Matrix<T>& xb, double tau) -> Matrix<T> {
    Vector<T> v = field(Vector<T>(xb.row(0).transpose()), tau);
    return v.transpose();
  };
  return sample_ode_batch<T>(batch_field, std::move(x), nfe, tau_start).row(0).transpose();
}

}  // namespace seqflow
