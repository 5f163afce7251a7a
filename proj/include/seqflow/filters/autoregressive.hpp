#pragma once

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "seqflow/core/adam.hpp"
#include "seqflow/core/checkpoint.hpp"
#include "seqflow/core/error.hpp"
#include "seqflow/core/mlp.hpp"
#include "seqflow/core/parallel.hpp"
#include "seqflow/core/rng.hpp"
#include "seqflow/dynamics/trajectory.hpp"
#include "seqflow/flowmatch/inference.hpp"
#include "seqflow/flowmatch/pairs.hpp"
#include "seqflow/flowmatch/training.hpp"
#include "seqflow/flowmatch/velocity.hpp"

namespace seqflow {

// Deterministic regression from the observation window ending at z_t to one
// state: s_t for estimation, s_{t+1} for forecasting. Normalized units.
struct ArDataset {
  MatrixF input;
  MatrixF target;
};

inline std::size_t ar_offset(FlowTask task) { return task == FlowTask::estimate ? 0 : 1; }

inline ModelMeta make_ar_meta(const ModelMeta& flow_meta) {
  ModelMeta m = flow_meta;
  m.kind = ModelKind::autoregressive;
  m.horizon = 1;
  return m;
}

inline ArDataset ar_dataset(const TaskSpec& spec, const TrajectorySet& ts, const ModelMeta& flow_meta) {
  validate(spec, ts);
  const ModelMeta meta = make_ar_meta(flow_meta);
  if (meta.window < 1) throw ValidationError("autoregressive baseline needs a window of at least one observation");
  const std::size_t steps = prediction_steps(spec, ts);
  const std::size_t off = ar_offset(spec.task);
  const std::size_t n = ts.n_traj * steps;
  ArDataset d;
  d.input.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(meta.context_dim()));
  d.target.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(meta.unit_dim));
  std::vector<double> s(meta.unit_dim);
  for (std::size_t i = 0; i < ts.n_traj; ++i) {
    for (std::size_t t = 0; t < steps; ++t) {
      const auto row = static_cast<Eigen::Index>(i * steps + t);
      normalize_window_into(meta, make_window(ts.obs_stream(i), ts.obs_dim, t, meta.window), d.input.row(row).data());
      const float* src = ts.state(i, t + off);
      std::copy(src, src + meta.unit_dim, s.begin());
      normalize_state_into(meta, s, d.target.row(row).data());
    }
  }
  return d;
}

// Mean-squared-error regression with Adam; architecture and schedule from tc.
inline Checkpoint train_ar_baseline(const ArDataset& data, const ModelMeta& meta, const TrainConfig& tc,
                                    const EpochCallback& on_epoch = {}, std::vector<EpochLog>* logs = nullptr) {
  validate(tc);
  const auto n = static_cast<std::size_t>(data.input.rows());
  if (n == 0) throw ValidationError("autoregressive training set is empty");
  Checkpoint ck;
  ck.meta = make_ar_meta(meta);
  ck.meta.seed = tc.seed;
  ck.config = make_autoregressive_config(ck.meta, tc.hidden, tc.activation);
  require_dim("ar input width", ck.config.input_dim, static_cast<std::size_t>(data.input.cols()));
  require_dim("ar target width", ck.config.output_dim, static_cast<std::size_t>(data.target.cols()));
  Rng init(tc.seed, "ar-init");
  ck.params = init_params<float>(ck.config, init);
  auto opt = OptimizerState<float>::zeros(static_cast<std::size_t>(ck.params.size()), tc.lr);
  Rng rng(tc.seed, "ar-train");
  std::vector<std::size_t> order(n);
  const std::size_t batches = (n + tc.batch_size - 1) / tc.batch_size;
  const std::size_t total = tc.epochs * batches;
  const auto start = std::chrono::steady_clock::now();
  std::vector<EpochLog> all;
  MatrixF x, y;
  MlpTape<float> tape;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng.engine());
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * tc.batch_size;
      const auto rows = static_cast<Eigen::Index>(std::min(n, lo + tc.batch_size) - lo);
      x.resize(rows, data.input.cols());
      y.resize(rows, data.target.cols());
      for (Eigen::Index r = 0; r < rows; ++r) {
        const auto idx = static_cast<Eigen::Index>(order[lo + static_cast<std::size_t>(r)]);
        x.row(r) = data.input.row(idx);
        y.row(r) = data.target.row(idx);
      }
      try {
        const MatrixF resid = mlp_forward_batch(ck.params, ck.config, x, &tape) - y;
        const double count = static_cast<double>(resid.size());
        const double loss = static_cast<double>(resid.squaredNorm()) / count;
        if (!std::isfinite(loss)) throw NumericError("regression loss is not finite");
        VectorF grads = VectorF::Zero(ck.params.size());
        mlp_backward_batch(ck.params, ck.config, tape, MatrixF(resid * static_cast<float>(2.0 / count)), grads);
        opt.lr = detail::cosine_lr(tc, step++, total);
        adam_update(opt, ck.params, grads);
        loss_sum += loss * static_cast<double>(rows);
      } catch (const NumericError& e) {
        throw NumericError(std::string("autoregressive training diverged in epoch ") + std::to_string(epoch) + ": " + e.what(),
                           static_cast<std::ptrdiff_t>(epoch));
      }
    }
    EpochLog log{epoch, loss_sum / static_cast<double>(n),
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()};
    all.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  if (logs) *logs = std::move(all);
  return ck;
}

// One prediction in raw units.
inline std::vector<double> ar_predict(const Checkpoint& ck, const ConditionWindow& window) {
  if (ck.meta.kind != ModelKind::autoregressive) throw ValidationError("ar_predict needs an autoregressive checkpoint");
  VectorF in(static_cast<Eigen::Index>(ck.meta.context_dim()));
  normalize_window_into(ck.meta, window, in.data());
  const VectorF out = mlp_forward(ck.params, ck.config, in);
  return denormalize_state(ck.meta, out.data(), ck.meta.unit_dim);
}

// Maps a predicted raw state to the observation that would be appended to the
// window. The default keeps the first obs_dim coordinates (the observed part
// of the Burgers grid).
using StateObserver = std::function<std::vector<double>(const std::vector<double>&)>;

inline StateObserver prefix_observer(std::size_t obs_dim) {
  return [obs_dim](const std::vector<double>& s) { return std::vector<double>(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(obs_dim)); };
}

// Slides the window one step and appends `z` as its newest row.
inline ConditionWindow advance_window(ConditionWindow w, const std::vector<double>& z) {
  require_dim("appended observation", w.obs_dim, z.size());
  if (w.length == 0) return w;
  std::rotate(w.values.begin(), w.values.begin() + static_cast<std::ptrdiff_t>(w.obs_dim), w.values.end());
  std::copy(z.begin(), z.end(), w.values.end() - static_cast<std::ptrdiff_t>(w.obs_dim));
  if (w.padded > 0) --w.padded;
  return w;
}

// H recursive predictions; each is observed and fed back into the window.
inline std::vector<double> ar_forecast(const Checkpoint& ck, ConditionWindow window, std::size_t horizon,
                                       const StateObserver& observe) {
  if (horizon < 1) throw ValidationError("forecast horizon must be >= 1");
  std::vector<double> out;
  out.reserve(horizon * ck.meta.unit_dim);
  for (std::size_t h = 0; h < horizon; ++h) {
    const auto s = ar_predict(ck, window);
    out.insert(out.end(), s.begin(), s.end());
    if (h + 1 < horizon) window = advance_window(std::move(window), observe(s));
  }
  return out;
}

// Runs the baseline over every stream and time step. Output layout matches
// sequential_infer with one chain per stream; evals_per_chain counts network
// calls, i.e. horizon per time step.
inline Predictions ar_predict_streams(const Checkpoint& ck, const ObservationBatch& obs, std::size_t horizon,
                                      const StateObserver& observe) {
  require_dim("observation dim", ck.meta.obs_dim, obs.obs_dim);
  Predictions out;
  out.chains = obs.streams;
  out.steps = obs.steps;
  out.x_dim = horizon * ck.meta.unit_dim;
  out.values.assign(out.chains * out.steps * out.x_dim, 0.0f);
  out.evals_per_chain = obs.steps * horizon;
  parallel_for(obs.streams, [&](std::size_t i) {
    for (std::size_t t = 0; t < obs.steps; ++t) {
      const auto f = ar_forecast(ck, make_window(obs.stream(i), obs.obs_dim, t, ck.meta.window), horizon, observe);
      float* dst = out.values.data() + (i * out.steps + t) * out.x_dim;
      for (std::size_t k = 0; k < f.size(); ++k) dst[k] = static_cast<float>(f[k]);
    }
  });
  return out;
}

}  // namespace seqflow
