#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "seqflow/core/error.hpp"
#include "seqflow/core/matrix.hpp"
#include "seqflow/core/mlp.hpp"
#include "seqflow/core/rng.hpp"
#include "seqflow/flowmatch/path.hpp"
#include "seqflow/flowmatch/velocity.hpp"

namespace seqflow {

// One training batch in normalized units. Row i couples target x0 (tau = 0)
// with source x1 (tau = 1) under context ctx (may have zero columns).
template <class T>
struct FlowBatch {
  Matrix<T> target;
  Matrix<T> source;
  Matrix<T> context;

  Eigen::Index rows() const { return target.rows(); }
};

template <class T>
struct LossAndGrad {
  double loss = 0.0;
  Vector<T> grads;
};

namespace detail {

template <class T>
void check_batch(const FlowBatch<T>& b) {
  if (b.rows() == 0) throw ValidationError("flow-matching batch is empty");
  require_dim("batch source rows", static_cast<std::size_t>(b.target.rows()), static_cast<std::size_t>(b.source.rows()));
  require_dim("batch source width", static_cast<std::size_t>(b.target.cols()), static_cast<std::size_t>(b.source.cols()));
  if (b.context.cols() > 0) {
    require_dim("batch context rows", static_cast<std::size_t>(b.target.rows()), static_cast<std::size_t>(b.context.rows()));
  }
}

// Interpolated inputs and regression targets for the given times.
template <class T>
std::pair<Matrix<T>, Matrix<T>> path_points(const FlowBatch<T>& b, const FlowPath& path, std::span<const double> taus) {
  require_dim("batch taus", static_cast<std::size_t>(b.rows()), taus.size());
  Matrix<T> xt(b.target.rows(), b.target.cols());
  Matrix<T> dx(b.target.rows(), b.target.cols());
  for (Eigen::Index r = 0; r < b.rows(); ++r) {
    const double tau = taus[static_cast<std::size_t>(r)];
    require_unit_interval(tau, "interpolation time");
    const T a = static_cast<T>(path.alpha(tau));
    const T s = static_cast<T>(path.sigma(tau));
    const T da = static_cast<T>(path.dalpha(tau));
    const T ds = static_cast<T>(path.dsigma(tau));
    xt.row(r) = a * b.target.row(r) + s * b.source.row(r);
    dx.row(r) = da * b.target.row(r) + ds * b.source.row(r);
  }
  return {std::move(xt), std::move(dx)};
}

}  // namespace detail

inline std::vector<double> draw_taus(std::size_t n, Rng& rng) {
  std::vector<double> taus(n);
  for (auto& t : taus) t = rng.uniform();
  return taus;
}

// Mean over batch and coordinates of |v(x_tau, tau; ctx) - dx_tau|^2 for an
// arbitrary field with signature field(x_tau, taus, ctx) -> velocities.
template <class T, class Field>
double fm_loss_with_field(Field&& field, const FlowBatch<T>& batch, const FlowPath& path, std::span<const double> taus) {
  detail::check_batch(batch);
  auto [xt, dx] = detail::path_points(batch, path, taus);
  const Matrix<T> v = field(xt, taus, batch.context);
  require_dim("field output rows", static_cast<std::size_t>(xt.rows()), static_cast<std::size_t>(v.rows()));
  require_dim("field output width", static_cast<std::size_t>(xt.cols()), static_cast<std::size_t>(v.cols()));
  const double loss = static_cast<double>((v - dx).squaredNorm()) / static_cast<double>(v.size());
  if (!std::isfinite(loss)) throw NumericError("flow-matching loss is not finite");
  return loss;
}

// Loss and exact parameter gradient at given interpolation times.
template <class T>
LossAndGrad<T> fm_loss_and_grad_at(const MlpConfig& config, const Vector<T>& params, const FlowBatch<T>& batch,
                                   const FlowPath& path, std::span<const double> taus) {
  detail::check_batch(batch);
  auto [xt, dx] = detail::path_points(batch, path, taus);
  MlpTape<T> tape;
  const Matrix<T> v = velocity_forward(config, params, xt, taus, batch.context, &tape);
  const Matrix<T> resid = v - dx;
  const double n = static_cast<double>(resid.size());
  LossAndGrad<T> out;
  out.loss = static_cast<double>(resid.squaredNorm()) / n;
  if (!std::isfinite(out.loss)) throw NumericError("flow-matching loss is not finite");
  out.grads = Vector<T>::Zero(params.size());
  const Matrix<T> upstream = resid * static_cast<T>(2.0 / n);
  mlp_backward_batch(params, config, tape, upstream, out.grads);
  return out;
}

// Draws one tau ~ Uniform(0,1) per batch row from `rng`.
template <class T>
LossAndGrad<T> fm_loss_and_grad(const MlpConfig& config, const Vector<T>& params, const FlowBatch<T>& batch,
                                const FlowPath& path, Rng& rng) {
  const auto taus = draw_taus(static_cast<std::size_t>(batch.rows()), rng);
  return fm_loss_and_grad_at(config, params, batch, path, taus);
}

}  // namespace seqflow
