#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "seqflow/core/checkpoint.hpp"
#include "seqflow/core/error.hpp"
#include "seqflow/core/parallel.hpp"
#include "seqflow/core/rng.hpp"
#include "seqflow/dynamics/trajectory.hpp"
#include "seqflow/flowmatch/sampler.hpp"
#include "seqflow/flowmatch/velocity.hpp"

namespace seqflow {

enum class FlowTask { estimate, forecast };

inline const char* to_string(FlowTask t) { return t == FlowTask::estimate ? "estimate" : "forecast"; }

inline FlowTask flow_task_from_string(const std::string& s) {
  if (s == "estimate") return FlowTask::estimate;
  if (s == "forecast") return FlowTask::forecast;
  throw ValidationError("unknown task '" + s + "' (expected estimate or forecast)");
}

// What is predicted at physical time t: the current state s_t (estimate) or
// the next H states s_{t+1..t+H} (forecast), from the window ending at z_t.
struct TaskSpec {
  FlowTask task = FlowTask::estimate;
  std::size_t horizon = 1;
  std::size_t window = 8;
};

inline void validate(const TaskSpec& spec, const TrajectorySet& ts) {
  if (spec.horizon < 1) throw ValidationError("task horizon must be >= 1");
  if (spec.task == FlowTask::estimate && spec.horizon != 1) throw ValidationError("estimation uses horizon 1");
  if (spec.task == FlowTask::forecast && ts.steps < ts.episode_length() + spec.horizon) {
    throw ValidationError("trajectories are too short for forecast horizon " + std::to_string(spec.horizon));
  }
}

// Number of physical times t with a defined target.
inline std::size_t prediction_steps(const TaskSpec& spec, const TrajectorySet& ts) {
  return spec.task == FlowTask::estimate ? ts.steps : std::min(ts.episode_length(), ts.steps - spec.horizon);
}

inline std::vector<double> task_target(const TaskSpec& spec, const TrajectorySet& ts, std::size_t traj, std::size_t t) {
  if (traj >= ts.n_traj || t >= prediction_steps(spec, ts)) {
    throw ValidationError("target (" + std::to_string(traj) + ", " + std::to_string(t) + ") out of trajectory range");
  }
  const std::size_t first = spec.task == FlowTask::estimate ? t : t + 1;
  std::vector<double> out(spec.horizon * ts.state_dim);
  for (std::size_t h = 0; h < spec.horizon; ++h) {
    const float* s = ts.state(traj, first + h);
    for (std::size_t k = 0; k < ts.state_dim; ++k) out[h * ts.state_dim + k] = s[k];
  }
  return out;
}

// Drops the first step and repeats the last, so that step h of the result
// refers to the same physical time as step h of the next prediction.
template <class T>
void shift_pad_into(const T* x, std::size_t unit_dim, std::size_t horizon, T* out) {
  for (std::size_t h = 0; h < horizon; ++h) {
    const std::size_t src = std::min(h + 1, horizon - 1);
    for (std::size_t k = 0; k < unit_dim; ++k) out[h * unit_dim + k] = x[src * unit_dim + k];
  }
}

inline std::vector<double> shift_pad(const std::vector<double>& x, std::size_t unit_dim, std::size_t horizon) {
  require_dim("shift_pad input", unit_dim * horizon, x.size());
  std::vector<double> out(x.size());
  shift_pad_into(x.data(), unit_dim, horizon, out.data());
  return out;
}

namespace detail {

inline Normalization column_stats(const std::vector<float>& values, std::size_t dim) {
  Normalization n{std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0)};
  const std::size_t rows = values.size() / dim;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < dim; ++k) n.mean[k] += values[r * dim + k];
  }
  for (auto& m : n.mean) m /= static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < dim; ++k) {
      const double d = values[r * dim + k] - n.mean[k];
      n.std[k] += d * d;
    }
  }
  for (auto& s : n.std) {
    s = std::sqrt(s / static_cast<double>(rows));
    if (s < 1e-6) s = 1.0;  // constant coordinates, e.g. Dirichlet boundaries
  }
  return n;
}

}  // namespace detail

// Model metadata with per-coordinate z-scoring fitted on `ts`.
inline ModelMeta make_model_meta(const TaskSpec& spec, const TrajectorySet& ts, const std::string& task_name, std::uint64_t seed) {
  validate(spec, ts);
  ModelMeta m;
  m.kind = ModelKind::velocity;
  m.task = task_name;
  m.unit_dim = ts.state_dim;
  m.horizon = spec.horizon;
  m.obs_dim = ts.obs_dim;
  m.window = spec.window;
  m.seed = seed;
  m.state_norm = detail::column_stats(ts.states, ts.state_dim);
  m.obs_norm = detail::column_stats(ts.observations, ts.obs_dim);
  return m;
}

// Training data in normalized float units, one row per example. `source` is
// empty for Gaussian-source pretraining.
struct FlowDataset {
  MatrixF target;
  MatrixF source;
  MatrixF context;

  std::size_t size() const { return static_cast<std::size_t>(target.rows()); }
  bool has_source() const { return source.rows() > 0; }
};

// Every (trajectory, t) pair with its window, for pretraining.
inline FlowDataset pretrain_dataset(const TaskSpec& spec, const TrajectorySet& ts, const ModelMeta& meta) {
  validate(spec, ts);
  const std::size_t steps = prediction_steps(spec, ts);
  const std::size_t n = ts.n_traj * steps;
  FlowDataset d;
  d.target.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(meta.x_dim()));
  d.context.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(meta.context_dim()));
  for (std::size_t i = 0; i < ts.n_traj; ++i) {
    for (std::size_t t = 0; t < steps; ++t) {
      const auto row = static_cast<Eigen::Index>(i * steps + t);
      normalize_state_into(meta, task_target(spec, ts, i, t), d.target.row(row).data());
      if (meta.window > 0) normalize_window_into(meta, make_window(ts.obs_stream(i), ts.obs_dim, t, meta.window), d.context.row(row).data());
    }
  }
  return d;
}

struct FinetunePair {
  std::vector<double> source;  // raw units, already shift-padded
  std::vector<double> target;  // raw units
  ConditionWindow context;
};

struct PairOptions {
  std::size_t nfe_rollout = 50;
  bool ground_truth = false;  // source from the true previous target instead of a model rollout
  std::uint64_t seed = 0;
  std::size_t chunk = 256;
};

// For every trajectory and t >= 1: target x_t, context ending at z_t, and as
// source a shift-padded sample of x_{t-1} drawn from the pretrained model
// given the window ending at z_{t-1}. Each (trajectory, t) rollout uses its
// own substream, so pairs do not depend on the thread count.
inline std::vector<FinetunePair> build_finetune_pairs(const FlowModel& pretrained, const TrajectorySet& ts, const TaskSpec& spec,
                                                      const PairOptions& opt) {
  validate(spec, ts);
  const ModelMeta& meta = pretrained.meta();
  require_dim("pretrained horizon", spec.horizon, meta.horizon);
  require_dim("pretrained window", spec.window, meta.window);
  require_dim("pretrained unit dim", ts.state_dim, meta.unit_dim);
  require_dim("pretrained obs dim", ts.obs_dim, meta.obs_dim);
  if (opt.nfe_rollout < 1) throw ValidationError("rollout nfe must be >= 1");
  const std::size_t steps = prediction_steps(spec, ts);
  if (steps < 2) throw ValidationError("finetuning pairs need trajectories with >= 2 prediction steps");
  const std::size_t per_traj = steps - 1;
  const std::size_t n = ts.n_traj * per_traj;
  const std::size_t xd = meta.x_dim();
  std::vector<FinetunePair> pairs(n);
  for (std::size_t i = 0; i < ts.n_traj; ++i) {
    for (std::size_t t = 1; t < steps; ++t) {
      auto& p = pairs[i * per_traj + t - 1];
      p.target = task_target(spec, ts, i, t);
      p.context = make_window(ts.obs_stream(i), ts.obs_dim, t, meta.window);
      if (opt.ground_truth) p.source = shift_pad(task_target(spec, ts, i, t - 1), meta.unit_dim, meta.horizon);
    }
  }
  if (opt.ground_truth) return pairs;

  const std::size_t chunks = (n + opt.chunk - 1) / opt.chunk;
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t lo = c * opt.chunk;
    const std::size_t hi = std::min(n, lo + opt.chunk);
    const auto rows = static_cast<Eigen::Index>(hi - lo);
    MatrixF x(rows, static_cast<Eigen::Index>(xd));
    MatrixF ctx(rows, static_cast<Eigen::Index>(meta.context_dim()));
    for (std::size_t j = lo; j < hi; ++j) {
      const std::size_t i = j / per_traj;
      const std::size_t t = j % per_traj;  // rollout time: one before the pair's time
      const auto r = static_cast<Eigen::Index>(j - lo);
      Rng rng(opt.seed, "rollout", j);
      for (std::size_t k = 0; k < xd; ++k) x(r, static_cast<Eigen::Index>(k)) = static_cast<float>(rng.normal());
      if (meta.window > 0) normalize_window_into(meta, make_window(ts.obs_stream(i), ts.obs_dim, t, meta.window), ctx.row(r).data());
    }
    auto field = [&](const MatrixF& xb, double tau) { return pretrained.velocity(xb, tau, ctx); };
    const MatrixF out = sample_ode_batch<float>(field, std::move(x), opt.nfe_rollout);
    for (std::size_t j = lo; j < hi; ++j) {
      const auto raw = denormalize_state(meta, out.row(static_cast<Eigen::Index>(j - lo)).data(), xd);
      pairs[j].source = shift_pad(raw, meta.unit_dim, meta.horizon);
    }
  });
  return pairs;
}

// Normalizes pairs into a training set.
inline FlowDataset finetune_dataset(const std::vector<FinetunePair>& pairs, const ModelMeta& meta) {
  if (pairs.empty()) throw ValidationError("no finetuning pairs");
  const auto n = static_cast<Eigen::Index>(pairs.size());
  FlowDataset d;
  d.target.resize(n, static_cast<Eigen::Index>(meta.x_dim()));
  d.source.resize(n, static_cast<Eigen::Index>(meta.x_dim()));
  d.context.resize(n, static_cast<Eigen::Index>(meta.context_dim()));
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& p = pairs[static_cast<std::size_t>(r)];
    require_dim("pair source", p.target.size(), p.source.size());
    normalize_state_into(meta, p.target, d.target.row(r).data());
    normalize_state_into(meta, p.source, d.source.row(r).data());
    if (meta.window > 0) normalize_window_into(meta, p.context, d.context.row(r).data());
  }
  return d;
}

}  // namespace seqflow
