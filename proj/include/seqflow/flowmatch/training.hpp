#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seqflow/core/adam.hpp"
#include "seqflow/core/checkpoint.hpp"
#include "seqflow/core/error.hpp"
#include "seqflow/core/rng.hpp"
#include "seqflow/flowmatch/loss.hpp"
#include "seqflow/flowmatch/pairs.hpp"
#include "seqflow/flowmatch/path.hpp"

namespace seqflow {

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 256;
  double lr = 1e-3;
  double lr_final = 1e-3;  // cosine decay from lr to lr_final over all steps
  std::uint64_t seed = 0;
  std::vector<std::size_t> hidden{256, 256, 256};
  Activation activation = Activation::tanh;
  std::size_t time_embed_dim = 16;
};

inline void validate(const TrainConfig& c) {
  if (c.epochs < 1) throw ValidationError("train epochs must be >= 1");
  if (c.batch_size < 1) throw ValidationError("train batch_size must be >= 1");
  if (!(c.lr > 0.0) || !(c.lr_final > 0.0)) throw ValidationError("train learning rates must be positive");
  if (c.hidden.empty()) throw ValidationError("velocity net needs at least one hidden layer");
}

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double wall_seconds = 0.0;
};

inline nlohmann::json to_json(const EpochLog& e) {
  return {{"epoch", e.epoch}, {"loss", e.loss}, {"wall_seconds", e.wall_seconds}};
}

using EpochCallback = std::function<void(const EpochLog&)>;

// Writes each epoch as one JSON line.
inline EpochCallback jsonl_epoch_logger(std::ostream& os) {
  return [&os](const EpochLog& e) { os << to_json(e).dump() << '\n' << std::flush; };
}

namespace detail {

inline double cosine_lr(const TrainConfig& c, std::size_t step, std::size_t total) {
  if (total <= 1) return c.lr;
  const double p = static_cast<double>(step) / static_cast<double>(total - 1);
  return c.lr_final + 0.5 * (c.lr - c.lr_final) * (1.0 + std::cos(std::numbers::pi * p));
}

// Shared loop. Sources are Gaussian when the dataset has none, otherwise the
// stored source renoised at tau_renoise with fresh noise every time it is used.
inline std::vector<EpochLog> train_flow(const MlpConfig& config, VectorF& params, const FlowDataset& data,
                                        const TrainConfig& tc, double tau_renoise, std::string_view stream,
                                        const EpochCallback& on_epoch) {
  validate(tc);
  if (data.size() == 0) throw ValidationError("training set is empty");
  require_unit_interval(tau_renoise, "tau_renoise");
  const FlowPath path = FlowPath::straight();
  const std::size_t n = data.size();
  const auto xd = data.target.cols();
  const auto cd = data.context.cols();
  const std::size_t batches = (n + tc.batch_size - 1) / tc.batch_size;
  const std::size_t total = tc.epochs * batches;
  auto opt = OptimizerState<float>::zeros(static_cast<std::size_t>(params.size()), tc.lr);
  Rng rng(tc.seed, stream);
  std::vector<std::size_t> order(n);
  std::vector<EpochLog> logs;
  const auto start = std::chrono::steady_clock::now();
  FlowBatch<float> batch;
  const float a = static_cast<float>(path.alpha(tau_renoise));
  const float s = static_cast<float>(path.sigma(tau_renoise));
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng.engine());
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * tc.batch_size;
      const auto rows = static_cast<Eigen::Index>(std::min(n, lo + tc.batch_size) - lo);
      batch.target.resize(rows, xd);
      batch.source.resize(rows, xd);
      batch.context.resize(rows, cd);
      for (Eigen::Index r = 0; r < rows; ++r) {
        const auto idx = static_cast<Eigen::Index>(order[lo + static_cast<std::size_t>(r)]);
        batch.target.row(r) = data.target.row(idx);
        if (cd > 0) batch.context.row(r) = data.context.row(idx);
        for (Eigen::Index k = 0; k < xd; ++k) {
          const float eps = static_cast<float>(rng.normal());
          batch.source(r, k) = data.has_source() ? a * data.source(idx, k) + s * eps : eps;
        }
      }
      opt.lr = cosine_lr(tc, step++, total);
      LossAndGrad<float> lg;
      try {
        lg = fm_loss_and_grad(config, params, batch, path, rng);
        adam_update(opt, params, lg.grads);
      } catch (const NumericError& e) {
        throw NumericError(std::string("training diverged in epoch ") + std::to_string(epoch) + ": " + e.what(),
                           static_cast<std::ptrdiff_t>(epoch));
      }
      loss_sum += lg.loss * static_cast<double>(rows);
    }
    EpochLog log{epoch, loss_sum / static_cast<double>(n),
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()};
    logs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return logs;
}

}  // namespace detail

// Gaussian-source training of a fresh velocity net.
inline Checkpoint pretrain(const FlowDataset& data, const ModelMeta& meta, const TrainConfig& tc,
                           const EpochCallback& on_epoch = {}, std::vector<EpochLog>* logs = nullptr) {
  if (data.has_source()) throw ValidationError("pretraining data must not carry sources");
  require_dim("pretrain target width", meta.x_dim(), static_cast<std::size_t>(data.target.cols()));
  require_dim("pretrain context width", meta.context_dim(), static_cast<std::size_t>(data.context.cols()));
  Checkpoint ck;
  ck.meta = meta;
  ck.meta.kind = ModelKind::velocity;
  ck.meta.seed = tc.seed;
  ck.config = make_velocity_config(meta, tc.hidden, tc.activation, tc.time_embed_dim);
  Rng init(tc.seed, "init");
  ck.params = init_params<float>(ck.config, init);
  auto l = detail::train_flow(ck.config, ck.params, data, tc, 1.0, "pretrain", on_epoch);
  if (logs) *logs = std::move(l);
  return ck;
}

// Sequential finetuning from the pretrained weights: sources are renoised at
// tau_renoise and transported to their targets. Architecture fields of `tc`
// are ignored; the pretrained architecture is kept.
inline Checkpoint finetune_sequential(const Checkpoint& pretrained, const FlowDataset& pairs, double tau_renoise,
                                      const TrainConfig& tc, const EpochCallback& on_epoch = {},
                                      std::vector<EpochLog>* logs = nullptr) {
  if (!pairs.has_source()) throw ValidationError("finetuning data needs sources");
  require_dim("finetune target width", pretrained.meta.x_dim(), static_cast<std::size_t>(pairs.target.cols()));
  require_dim("finetune context width", pretrained.meta.context_dim(), static_cast<std::size_t>(pairs.context.cols()));
  Checkpoint ck = pretrained;
  ck.meta.seed = tc.seed;
  TrainConfig arch = tc;
  arch.hidden = pretrained.config.hidden_dims.empty() ? std::vector<std::size_t>{1} : pretrained.config.hidden_dims;
  auto l = detail::train_flow(ck.config, ck.params, pairs, arch, tau_renoise, "finetune", on_epoch);
  if (logs) *logs = std::move(l);
  return ck;
}

}  // namespace seqflow
