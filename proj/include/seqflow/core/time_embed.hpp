#pragma once

#include <cmath>
#include <cstddef>

#include "seqflow/core/error.hpp"
#include "seqflow/core/matrix.hpp"

namespace seqflow {

inline constexpr double kTimeEmbedBase = 1e4;
// tau in [0, 1] is stretched onto the usual discrete-timestep range before
// the sinusoids are taken.
inline constexpr double kTimeEmbedScale = 1000.0;

inline double time_embed_frequency(std::size_t k, std::size_t half) {
  return kTimeEmbedScale * std::pow(kTimeEmbedBase, -static_cast<double>(k) / static_cast<double>(half));
}

// [sin(tau*w_0) .. sin(tau*w_{h-1}), cos(tau*w_0) .. cos(tau*w_{h-1})] with
// h = dim/2; an odd dim gets a trailing zero.
template <class T = double>
void time_embed_into(double tau, std::size_t dim, T* out) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw ValidationError("time_embed: tau must lie in [0,1], got " + std::to_string(tau));
  const std::size_t half = dim / 2;
  for (std::size_t k = 0; k < half; ++k) {
    const double arg = tau * time_embed_frequency(k, half);
    out[k] = static_cast<T>(std::sin(arg));
    out[half + k] = static_cast<T>(std::cos(arg));
  }
  if (dim % 2 == 1) out[dim - 1] = T(0);
}

template <class T = double>
Vector<T> time_embed(double tau, std::size_t dim) {
  Vector<T> v(static_cast<Eigen::Index>(dim));
  time_embed_into<T>(tau, dim, v.data());
  return v;
}

}  // namespace seqflow
