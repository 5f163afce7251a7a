#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "seqflow/core/checkpoint.hpp"
#include "seqflow/core/error.hpp"
#include "seqflow/core/matrix.hpp"
#include "seqflow/core/mlp.hpp"
#include "seqflow/core/time_embed.hpp"

namespace seqflow {

// The last L observations ending at physical time t, oldest first. Rows that
// fall before the first observation are zero and counted in `padded`.
struct ConditionWindow {
  std::size_t length = 0;
  std::size_t obs_dim = 0;
  std::size_t padded = 0;
  std::vector<double> values;  // length * obs_dim, raw units

  std::size_t flat_size() const { return length * obs_dim; }
};

// `observations` holds one trajectory, time-major (T x obs_dim).
inline ConditionWindow make_window(std::span<const float> observations, std::size_t obs_dim, std::size_t t,
                                   std::size_t length) {
  if (obs_dim == 0) throw ValidationError("window obs_dim must be >= 1");
  const std::size_t steps = observations.size() / obs_dim;
  if (t >= steps) throw ValidationError("window end " + std::to_string(t) + " out of range (T=" + std::to_string(steps) + ")");
  ConditionWindow w;
  w.length = length;
  w.obs_dim = obs_dim;
  w.values.assign(length * obs_dim, 0.0);
  for (std::size_t r = 0; r < length; ++r) {
    // Row r holds time t - (length - 1 - r).
    const std::size_t back = length - 1 - r;
    if (back > t) {
      ++w.padded;
      continue;
    }
    const std::size_t src = (t - back) * obs_dim;
    for (std::size_t k = 0; k < obs_dim; ++k) w.values[r * obs_dim + k] = observations[src + k];
  }
  return w;
}

// Input layout of the velocity net: [x(tau) | time_embed(tau) | context].
inline MlpConfig make_velocity_config(const ModelMeta& meta, std::vector<std::size_t> hidden, Activation act,
                                      std::size_t time_embed_dim) {
  MlpConfig c;
  c.input_dim = meta.x_dim() + time_embed_dim + meta.context_dim();
  c.hidden_dims = std::move(hidden);
  c.output_dim = meta.x_dim();
  c.activation = act;
  c.time_embed_dim = time_embed_dim;
  validate(c);
  return c;
}

// Autoregressive baseline: window -> next raw state (normalized units).
inline MlpConfig make_autoregressive_config(const ModelMeta& meta, std::vector<std::size_t> hidden, Activation act) {
  MlpConfig c;
  c.input_dim = meta.context_dim();
  c.hidden_dims = std::move(hidden);
  c.output_dim = meta.unit_dim;
  c.activation = act;
  c.time_embed_dim = 0;
  validate(c);
  return c;
}

// Normalization of an x vector (horizon x unit_dim) with per-unit stats.
template <class T>
void normalize_state_into(const ModelMeta& meta, std::span<const double> raw, T* out) {
  require_dim("state vector", meta.x_dim(), raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const std::size_t k = i % meta.unit_dim;
    out[i] = static_cast<T>((raw[i] - meta.state_norm.mean[k]) / meta.state_norm.std[k]);
  }
}

template <class T>
std::vector<double> denormalize_state(const ModelMeta& meta, const T* normalized, std::size_t n) {
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = i % meta.unit_dim;
    out[i] = static_cast<double>(normalized[i]) * meta.state_norm.std[k] + meta.state_norm.mean[k];
  }
  return out;
}

template <class T>
void normalize_window_into(const ModelMeta& meta, const ConditionWindow& w, T* out) {
  require_dim("condition window length", meta.window, w.length);
  require_dim("condition window obs_dim", meta.obs_dim, w.obs_dim);
  for (std::size_t r = 0; r < w.length; ++r) {
    for (std::size_t k = 0; k < w.obs_dim; ++k) {
      const std::size_t i = r * w.obs_dim + k;
      out[i] = r < w.padded ? T(0) : static_cast<T>((w.values[i] - meta.obs_norm.mean[k]) / meta.obs_norm.std[k]);
    }
  }
}

// Assembles the network input for a batch. `x` and `ctx` are in normalized
// units, one row per sample.
template <class T>
Matrix<T> velocity_input(const MlpConfig& config, const Matrix<T>& x, std::span<const double> taus, const Matrix<T>& ctx) {
  const auto te = config.time_embed_dim;
  require_dim("velocity input width", config.input_dim, static_cast<std::size_t>(x.cols() + ctx.cols()) + te);
  require_dim("velocity batch taus", static_cast<std::size_t>(x.rows()), taus.size());
  if (ctx.cols() > 0) require_dim("velocity batch context rows", static_cast<std::size_t>(x.rows()), static_cast<std::size_t>(ctx.rows()));
  Matrix<T> in(x.rows(), static_cast<Eigen::Index>(config.input_dim));
  in.leftCols(x.cols()) = x;
  std::vector<T> emb(te);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    time_embed_into<T>(taus[static_cast<std::size_t>(r)], te, emb.data());
    for (std::size_t k = 0; k < te; ++k) in(r, x.cols() + static_cast<Eigen::Index>(k)) = emb[k];
  }
  if (ctx.cols() > 0) in.rightCols(ctx.cols()) = ctx;
  return in;
}

template <class T>
Matrix<T> velocity_forward(const MlpConfig& config, const Vector<T>& params, const Matrix<T>& x,
                           std::span<const double> taus, const Matrix<T>& ctx, MlpTape<T>* tape = nullptr) {
  return mlp_forward_batch(params, config, velocity_input(config, x, taus, ctx), tape);
}

// A trained float model plus an evaluation hook; the hook sees the batch size
// of every velocity-net call and is how NFE accounting is instrumented.
class FlowModel {
 public:
  explicit FlowModel(Checkpoint ck) : ck_(std::move(ck)) {
    if (ck_.meta.kind != ModelKind::velocity) throw ValidationError("FlowModel requires a velocity checkpoint");
    require_dim("velocity net output", ck_.meta.x_dim(), ck_.config.output_dim);
  }

  const Checkpoint& checkpoint() const { return ck_; }
  const ModelMeta& meta() const { return ck_.meta; }

  MatrixF velocity(const MatrixF& x, std::span<const double> taus, const MatrixF& ctx) const {
    if (on_eval) on_eval(static_cast<std::size_t>(x.rows()));
    return velocity_forward(ck_.config, ck_.params, x, taus, ctx);
  }

  MatrixF velocity(const MatrixF& x, double tau, const MatrixF& ctx) const {
    std::vector<double> taus(static_cast<std::size_t>(x.rows()), tau);
    return velocity(x, taus, ctx);
  }

  std::function<void(std::size_t)> on_eval;

 private:
  Checkpoint ck_;
};

}  // namespace seqflow
