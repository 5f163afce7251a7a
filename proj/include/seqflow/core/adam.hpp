#pragma once

#include <cmath>
#include <cstddef>
#include <utility>

#include "seqflow/core/error.hpp"
#include "seqflow/core/matrix.hpp"

namespace seqflow {

template <class T>
struct OptimizerState {
  std::size_t step = 0;
  Vector<T> first_moment;
  Vector<T> second_moment;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static OptimizerState zeros(std::size_t n, double lr = 1e-3) {
    OptimizerState s;
    s.first_moment = Vector<T>::Zero(static_cast<Eigen::Index>(n));
    s.second_moment = Vector<T>::Zero(static_cast<Eigen::Index>(n));
    s.lr = lr;
    return s;
  }
};

// Bias-corrected Adam update, applied in place. Throws before touching any
// state if a gradient entry is non-finite.
template <class T>
void adam_update(OptimizerState<T>& state, Vector<T>& params, const Vector<T>& grads) {
  const auto n = static_cast<std::size_t>(params.size());
  require_dim("adam grads", n, static_cast<std::size_t>(grads.size()));
  require_dim("adam first moment", n, static_cast<std::size_t>(state.first_moment.size()));
  require_dim("adam second moment", n, static_cast<std::size_t>(state.second_moment.size()));
  for (Eigen::Index i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(static_cast<double>(grads[i]))) throw NumericError("adam: non-finite gradient", i);
  }
  state.step += 1;
  const T b1 = static_cast<T>(state.beta1);
  const T b2 = static_cast<T>(state.beta2);
  const double t = static_cast<double>(state.step);
  const T c1 = static_cast<T>(1.0 / (1.0 - std::pow(state.beta1, t)));
  const T c2 = static_cast<T>(1.0 / (1.0 - std::pow(state.beta2, t)));
  const T lr = static_cast<T>(state.lr);
  const T eps = static_cast<T>(state.eps);
  state.first_moment = b1 * state.first_moment + (static_cast<T>(1) - b1) * grads;
  state.second_moment = b2 * state.second_moment + (static_cast<T>(1) - b2) * grads.cwiseAbs2();
  params.array() -= lr * (state.first_moment.array() * c1) / ((state.second_moment.array() * c2).sqrt() + eps);
}

// Value-returning form of adam_update.
template <class T>
std::pair<OptimizerState<T>, Vector<T>> adam_step(const OptimizerState<T>& state, const Vector<T>& params,
                                                  const Vector<T>& grads) {
  OptimizerState<T> s = state;
  Vector<T> p = params;
  adam_update(s, p, grads);
  return {std::move(s), std::move(p)};
}

}  // namespace seqflow
