#pragma once

#include <atomic>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "seqflow/core/error.hpp"
#include "seqflow/core/parallel.hpp"
#include "seqflow/core/rng.hpp"
#include "seqflow/dynamics/trajectory.hpp"
#include "seqflow/flowmatch/pairs.hpp"
#include "seqflow/flowmatch/path.hpp"
#include "seqflow/flowmatch/sampler.hpp"
#include "seqflow/flowmatch/velocity.hpp"

namespace seqflow {

// sequential: x_1 from the pretrained net, then the sequential net transports
//   the renoised, shift-padded previous prediction from tau = 1.
// restart: every prediction is sampled afresh from Gaussian noise by the
//   pretrained net.
// warm_start: the pretrained net denoises the renoised previous prediction,
//   treating it as a point of its own path at tau = tau_renoise.
enum class InferMode { sequential, restart, warm_start };

inline const char* to_string(InferMode m) {
  switch (m) {
    case InferMode::sequential: return "sequential";
    case InferMode::restart: return "restart";
    case InferMode::warm_start: return "warm_start";
  }
  return "?";
}

// Observation streams laid out stream-major, then time, then dimension. Each
// stream stores `stride` steps (0 means `steps`) of which the first `steps`
// are used.
struct ObservationBatch {
  std::span<const float> data;
  std::size_t streams = 0;
  std::size_t steps = 0;
  std::size_t obs_dim = 0;
  std::size_t stride = 0;

  std::size_t stored_steps() const { return stride == 0 ? steps : stride; }
  std::span<const float> stream(std::size_t i) const { return data.subspan(i * stored_steps() * obs_dim, steps * obs_dim); }

  static ObservationBatch from(const TrajectorySet& ts, std::size_t steps) {
    if (steps > ts.steps) throw ValidationError("requested more steps than the trajectories hold");
    ObservationBatch b;
    b.data = ts.observations;
    b.streams = ts.n_traj;
    b.steps = steps;
    b.obs_dim = ts.obs_dim;
    b.stride = ts.steps;
    return b;
  }
};

// Predictions in raw units for chains = streams * replicas, laid out
// chain-major, then time, then x dimension. Chain c follows stream c / replicas.
struct Predictions {
  std::size_t chains = 0;
  std::size_t replicas = 1;
  std::size_t steps = 0;
  std::size_t x_dim = 0;
  std::vector<float> values;
  std::size_t evals_per_chain = 0;

  const float* at(std::size_t chain, std::size_t t) const { return values.data() + (chain * steps + t) * x_dim; }
};

struct InferOptions {
  InferMode mode = InferMode::sequential;
  std::size_t replicas = 1;
  std::size_t chunk = 64;
};

// Runs the prediction recursion on every chain. Each chain draws from its own
// substream (seed, "infer", chain) and chains are processed in fixed chunks,
// so for a given chunk size results do not depend on the number of threads.
// Both models' on_eval hooks may be invoked concurrently.
inline Predictions sequential_infer(const FlowModel& pretrained, const FlowModel& seqnet, const ObservationBatch& obs,
                                    const SamplerConfig& sampler, const InferOptions& opt = {}) {
  validate(sampler);
  const ModelMeta& meta = pretrained.meta();
  if (seqnet.meta().state_norm != meta.state_norm || seqnet.meta().obs_norm != meta.obs_norm ||
      seqnet.meta().x_dim() != meta.x_dim() || seqnet.meta().window != meta.window) {
    throw ValidationError("sequential and pretrained models disagree on data layout");
  }
  require_dim("observation dim", meta.obs_dim, obs.obs_dim);
  require_dim("observation payload", obs.streams * obs.stored_steps() * obs.obs_dim, obs.data.size());
  if (obs.steps < 1) throw ValidationError("inference needs at least one observation");
  if (obs.steps > obs.stored_steps()) throw ValidationError("observation steps exceed the stored stream length");
  if (opt.replicas < 1 || opt.chunk < 1) throw ValidationError("replicas and chunk must be >= 1");

  const FlowPath path = FlowPath::straight();
  const std::size_t xd = meta.x_dim();
  const std::size_t cd = meta.context_dim();
  Predictions out;
  out.replicas = opt.replicas;
  out.chains = obs.streams * opt.replicas;
  out.steps = obs.steps;
  out.x_dim = xd;
  out.values.assign(out.chains * out.steps * xd, 0.0f);

  const FlowModel& later = opt.mode == InferMode::sequential ? seqnet : pretrained;
  const double tau_start = opt.mode == InferMode::warm_start ? sampler.tau_renoise : 1.0;
  const float a = static_cast<float>(path.alpha(sampler.tau_renoise));
  const float s = static_cast<float>(path.sigma(sampler.tau_renoise));
  std::atomic<std::size_t> evals{0};

  const std::size_t chunks = (out.chains + opt.chunk - 1) / opt.chunk;
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t lo = c * opt.chunk;
    const std::size_t hi = std::min(out.chains, lo + opt.chunk);
    const auto rows = static_cast<Eigen::Index>(hi - lo);
    std::vector<Rng> rngs;
    rngs.reserve(hi - lo);
    for (std::size_t j = lo; j < hi; ++j) rngs.emplace_back(sampler.seed, "infer", j);
    MatrixF x(rows, static_cast<Eigen::Index>(xd));
    MatrixF prev(rows, static_cast<Eigen::Index>(xd));
    MatrixF ctx(rows, static_cast<Eigen::Index>(cd));
    std::size_t local_evals = 0;
    for (std::size_t t = 0; t < obs.steps; ++t) {
      for (Eigen::Index r = 0; r < rows; ++r) {
        const std::size_t chain = lo + static_cast<std::size_t>(r);
        if (cd > 0) {
          normalize_window_into(meta, make_window(obs.stream(chain / opt.replicas), obs.obs_dim, t, meta.window), ctx.row(r).data());
        }
      }
      const bool fresh = t == 0 || opt.mode == InferMode::restart;
      for (Eigen::Index r = 0; r < rows; ++r) {
        Rng& rng = rngs[static_cast<std::size_t>(r)];
        if (fresh) {
          for (Eigen::Index k = 0; k < x.cols(); ++k) x(r, k) = static_cast<float>(rng.normal());
        } else {
          shift_pad_into(prev.row(r).data(), meta.unit_dim, meta.horizon, x.row(r).data());
          for (Eigen::Index k = 0; k < x.cols(); ++k) x(r, k) = a * x(r, k) + s * static_cast<float>(rng.normal());
        }
      }
      const FlowModel& net = fresh ? pretrained : later;
      const std::size_t nfe = t == 0 ? sampler.initial_nfe() : sampler.nfe;
      const double start = fresh ? 1.0 : tau_start;
      auto field = [&](const MatrixF& xb, double tau) {
        ++local_evals;
        return net.velocity(xb, tau, ctx);
      };
      x = sample_ode_batch<float>(field, std::move(x), nfe, start);
      prev = x;
      for (Eigen::Index r = 0; r < rows; ++r) {
        const auto raw = denormalize_state(meta, x.row(r).data(), xd);
        float* dst = out.values.data() + ((lo + static_cast<std::size_t>(r)) * out.steps + t) * xd;
        for (std::size_t k = 0; k < xd; ++k) dst[k] = static_cast<float>(raw[k]);
      }
    }
    if (c == 0) evals.store(local_evals);
  });
  out.evals_per_chain = evals.load();
  return out;
}

}  // namespace seqflow
