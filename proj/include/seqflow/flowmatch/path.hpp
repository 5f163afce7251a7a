#pragma once

#include <string>
#include <utility>

#include "seqflow/core/error.hpp"
#include "seqflow/core/matrix.hpp"
#include "seqflow/core/rng.hpp"

namespace seqflow {

// x(tau) = alpha(tau) x0 + sigma(tau) x1. Only the straight (rectified
// flow) path is provided: alpha = 1 - tau, sigma = tau.
struct FlowPath {
  enum class Kind { straight };
  Kind kind = Kind::straight;

  double alpha(double) const;
  double sigma(double) const;
  double dalpha(double) const { return -1.0; }
  double dsigma(double) const { return 1.0; }

  std::string id() const { return "straight"; }

  static FlowPath straight() { return {}; }
};

inline double FlowPath::alpha(double tau) const { return 1.0 - tau; }
inline double FlowPath::sigma(double tau) const { return tau; }

inline void require_unit_interval(double tau, const char* what) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw ValidationError(std::string(what) + " must lie in [0,1], got " + std::to_string(tau));
}

// Returns (x_tau, dx_tau/dtau).
template <class T>
std::pair<Vector<T>, Vector<T>> interpolate(const FlowPath& path, const Vector<T>& x0, const Vector<T>& x1, double tau) {
  require_dim("interpolate endpoints", static_cast<std::size_t>(x0.size()), static_cast<std::size_t>(x1.size()));
  require_unit_interval(tau, "interpolation time");
  const T a = static_cast<T>(path.alpha(tau));
  const T s = static_cast<T>(path.sigma(tau));
  const T da = static_cast<T>(path.dalpha(tau));
  const T ds = static_cast<T>(path.dsigma(tau));
  Vector<T> xt = a * x0 + s * x1;
  // Exact endpoints regardless of rounding in the affine combination.
  if (tau == 0.0) xt = x0;
  if (tau == 1.0) xt = x1;
  return {std::move(xt), da * x0 + ds * x1};
}

// alpha(tau_r) x + sigma(tau_r) eps with fresh eps ~ N(0, I).
template <class T>
Vector<T> renoise(const Vector<T>& x, double tau_r, const FlowPath& path, Rng& rng) {
  require_unit_interval(tau_r, "renoise level");
  if (tau_r == 0.0) return x;
  Vector<T> out(x.size());
  const double a = path.alpha(tau_r);
  const double s = path.sigma(tau_r);
  for (Eigen::Index i = 0; i < x.size(); ++i) out[i] = static_cast<T>(a * static_cast<double>(x[i]) + s * rng.normal());
  return out;
}

}  // namespace seqflow
