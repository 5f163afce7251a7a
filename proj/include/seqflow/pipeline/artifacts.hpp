#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seqflow/core/binary_io.hpp"
#include "seqflow/core/checkpoint.hpp"
#include "seqflow/core/error.hpp"
#include "seqflow/core/parallel.hpp"
#include "seqflow/core/rng.hpp"
#include "seqflow/dynamics/trajectory.hpp"
#include "seqflow/filters/filters.hpp"
#include "seqflow/flowmatch/inference.hpp"
#include "seqflow/flowmatch/pairs.hpp"
#include "seqflow/pipeline/config.hpp"

namespace seqflow {

// Missing inputs of a stage, reported together.
class MissingArtifactError : public Error {
 public:
  explicit MissingArtifactError(std::vector<std::filesystem::path> paths)
      : Error(message(paths)), paths_(std::move(paths)) {}
  const std::vector<std::filesystem::path>& paths() const { return paths_; }

 private:
  static std::string message(const std::vector<std::filesystem::path>& paths) {
    std::string m = "missing artifacts (run the earlier stages first):";
    for (const auto& p : paths) m += "\n  " + p.string();
    return m;
  }
  std::vector<std::filesystem::path> paths_;
};

inline void require_artifacts(const std::vector<std::filesystem::path>& paths) {
  std::vector<std::filesystem::path> missing;
  for (const auto& p : paths) {
    if (!std::filesystem::exists(p)) missing.push_back(p);
  }
  if (!missing.empty()) throw MissingArtifactError(std::move(missing));
}

// One data regime: a Lorenz/toy noise level, or the single Burgers setting.
struct Level {
  std::optional<double> db;

  std::string name() const {
    if (!db) return "base";
    std::ostringstream os;
    os << "db" << *db;
    return os.str();
  }
};

inline std::vector<Level> levels(const RunConfig& c) {
  if (!c.has_noise_levels()) return {Level{}};
  std::vector<Level> out;
  for (double db : c.noise_db) out.push_back(Level{db});
  return out;
}

inline std::string tau_tag(double tau) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << tau;
  return os.str();
}

inline const char* pair_mode(bool ground_truth) { return ground_truth ? "groundtruth" : "rollout"; }

struct Layout {
  std::filesystem::path root;

  std::filesystem::path data(const Level& l, const std::string& split) const { return root / "data" / l.name() / (split + ".sfmd"); }
  std::filesystem::path model_dir(const Level& l, std::uint64_t seed) const {
    return root / "models" / l.name() / ("seed" + std::to_string(seed));
  }
  std::filesystem::path pretrained(const Level& l, std::uint64_t seed) const { return model_dir(l, seed) / "pretrained.sfmc"; }
  std::filesystem::path ar(const Level& l, std::uint64_t seed) const { return model_dir(l, seed) / "ar.sfmc"; }
  std::filesystem::path sequential(const Level& l, std::uint64_t seed, double tau, bool gt) const {
    return model_dir(l, seed) / ("sequential_tau" + tau_tag(tau) + "_" + pair_mode(gt) + ".sfmc");
  }
  std::filesystem::path pairs(const Level& l, std::uint64_t seed, bool gt) const {
    return root / "pairs" / l.name() / ("seed" + std::to_string(seed)) / (std::string("pairs_") + pair_mode(gt) + ".sfmp");
  }
  std::filesystem::path predictions(const Level& l, std::uint64_t seed, const std::string& method) const {
    return root / "predictions" / l.name() / ("seed" + std::to_string(seed)) / (method + ".sfmr");
  }
  std::filesystem::path log(const Level& l, std::uint64_t seed, const std::string& stage) const {
    return root / "logs" / l.name() / ("seed" + std::to_string(seed)) / (stage + ".jsonl");
  }
  std::filesystem::path reports() const { return root / "reports"; }
};

// Scalar linear-Gaussian chain: s_0 ~ N(0, 1), s_t = rho s_{t-1} + sqrt(1 - rho^2) w,
// z_t = s_t + r v with r from the noise level. Unit stationary variance.
inline TrajectorySet toy_dataset(double rho, double db, std::size_t n_traj, std::size_t T, std::uint64_t seed) {
  if (!(std::abs(rho) < 1.0)) throw ValidationError("toy rho must lie in (-1, 1)");
  if (n_traj < 1 || T < 1) throw ValidationError("dataset counts must be >= 1");
  const double r = NoiseLevel{db}.r();
  const double q = std::sqrt(1.0 - rho * rho);
  TrajectorySet ts;
  ts.n_traj = n_traj;
  ts.steps = T;
  ts.state_dim = 1;
  ts.obs_dim = 1;
  ts.meta = {{"generator", {{"system", "toy"}, {"rho", rho}, {"db", db}}}, {"seed", seed}, {"episode_length", T},
             {"horizon", 1}, {"r", r}, {"q", q}};
  ts.states.resize(n_traj * T);
  ts.observations.resize(n_traj * T);
  parallel_for(n_traj, [&](std::size_t i) {
    Rng rng(seed, "trajectory", i);
    double s = rng.normal();
    for (std::size_t t = 0; t < T; ++t) {
      if (t > 0) s = rho * s + q * rng.normal();
      ts.states[i * T + t] = static_cast<float>(s);
      ts.observations[i * T + t] = static_cast<float>(s + r * rng.normal());
    }
  });
  validate(ts);
  return ts;
}

inline std::size_t split_size(const RunConfig& c, const std::string& split) {
  if (split == "pretrain") return c.n_pretrain;
  if (split == "finetune") return c.n_finetune;
  if (split == "test") return c.n_test;
  throw ValidationError("unknown data split '" + split + "'");
}

inline TrajectorySet make_split(const RunConfig& c, const Level& l, const std::string& split) {
  const std::size_t n = split_size(c, split);
  const std::uint64_t seed = data_seed(c, split);
  if (c.task == TaskKind::toy) return toy_dataset(c.system.toy_rho, *l.db, n, c.episode_length, seed);
  DatasetConfig d;
  d.delta = c.system.delta;
  d.burn_in = c.system.burn_in;
  d.nu = c.system.nu;
  d.substeps = c.system.substeps;
  d.forcing_std = c.system.forcing_std;
  if (c.task == TaskKind::lorenz_estimate) {
    d.system = "lorenz";
    d.db = *l.db;
  } else {
    d.system = "burgers";
    d.horizon = c.horizon;
  }
  return generate_dataset(d, n, c.episode_length, seed);
}

// Known state-space model of the estimation tasks, for the classical filters.
inline StateSpaceModel task_model(const RunConfig& c, const Level& l) {
  if (c.task == TaskKind::lorenz_estimate) {
    return lorenz_model(LorenzSystem::from_db(*l.db, c.system.delta));
  }
  if (c.task == TaskKind::toy) {
    const double rho = c.system.toy_rho;
    const double r = NoiseLevel{*l.db}.r();
    return linear_model(MatrixXd::Constant(1, 1, rho), MatrixXd::Constant(1, 1, 1.0 - rho * rho), MatrixXd::Identity(1, 1),
                        MatrixXd::Constant(1, 1, r * r));
  }
  throw ValidationError("no state-space model for task " + std::string(to_string(c.task)));
}

// Filter prior: the climatological mean and per-coordinate variance of the
// training states.
inline GaussianBelief climatology_prior(const ModelMeta& meta) {
  const auto d = static_cast<Eigen::Index>(meta.unit_dim);
  GaussianBelief b{VectorXd(d), MatrixXd::Zero(d, d)};
  for (Eigen::Index k = 0; k < d; ++k) {
    b.mean[k] = meta.state_norm.mean[static_cast<std::size_t>(k)];
    const double s = meta.state_norm.std[static_cast<std::size_t>(k)];
    b.cov(k, k) = s * s;
  }
  return b;
}

inline constexpr char kPairsMagic[] = "SFMP";
inline constexpr char kPredictionsMagic[] = "SFMR";
inline constexpr std::uint8_t kPipelineFormatVersion = 1;

// Per pair: source | target | context values | padded count.
inline std::string encode_pairs(const std::vector<FinetunePair>& pairs, const nlohmann::json& info) {
  if (pairs.empty()) throw ValidationError("no pairs to encode");
  const std::size_t xd = pairs[0].target.size();
  const std::size_t len = pairs[0].context.length;
  const std::size_t od = pairs[0].context.obs_dim;
  std::vector<float> payload;
  payload.reserve(pairs.size() * (2 * xd + len * od + 1));
  for (const auto& p : pairs) {
    require_dim("pair source", xd, p.source.size());
    require_dim("pair target", xd, p.target.size());
    require_dim("pair context", len * od, p.context.values.size());
    for (double v : p.source) payload.push_back(static_cast<float>(v));
    for (double v : p.target) payload.push_back(static_cast<float>(v));
    for (double v : p.context.values) payload.push_back(static_cast<float>(v));
    payload.push_back(static_cast<float>(p.context.padded));
  }
  nlohmann::json header = info;
  header["count"] = pairs.size();
  header["x_dim"] = xd;
  header["window"] = len;
  header["obs_dim"] = od;
  return encode_container(std::string_view(kPairsMagic, 4), kPipelineFormatVersion, header.dump(), payload);
}

inline std::vector<FinetunePair> decode_pairs(std::string_view bytes) {
  auto blob = decode_container(bytes, std::string_view(kPairsMagic, 4), kPipelineFormatVersion);
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(blob.header);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("pairs header is not valid JSON: ") + e.what());
  }
  const auto n = h.at("count").get<std::size_t>();
  const auto xd = h.at("x_dim").get<std::size_t>();
  const auto len = h.at("window").get<std::size_t>();
  const auto od = h.at("obs_dim").get<std::size_t>();
  const std::size_t row = 2 * xd + len * od + 1;
  if (blob.payload.size() != n * row) throw FormatError("pairs payload size does not match its header");
  std::vector<FinetunePair> pairs(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float* p = blob.payload.data() + i * row;
    auto& out = pairs[i];
    out.source.assign(p, p + xd);
    out.target.assign(p + xd, p + 2 * xd);
    out.context.length = len;
    out.context.obs_dim = od;
    out.context.values.assign(p + 2 * xd, p + 2 * xd + len * od);
    out.context.padded = static_cast<std::size_t>(p[row - 1]);
  }
  return pairs;
}

inline std::string encode_predictions(const Predictions& p, const nlohmann::json& info) {
  require_dim("predictions payload", p.chains * p.steps * p.x_dim, p.values.size());
  nlohmann::json header = info;
  header["chains"] = p.chains;
  header["replicas"] = p.replicas;
  header["steps"] = p.steps;
  header["x_dim"] = p.x_dim;
  header["evals_per_chain"] = p.evals_per_chain;
  return encode_container(std::string_view(kPredictionsMagic, 4), kPipelineFormatVersion, header.dump(), p.values);
}

inline Predictions decode_predictions(std::string_view bytes) {
  auto blob = decode_container(bytes, std::string_view(kPredictionsMagic, 4), kPipelineFormatVersion);
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(blob.header);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("predictions header is not valid JSON: ") + e.what());
  }
  Predictions p;
  p.chains = h.at("chains").get<std::size_t>();
  p.replicas = h.at("replicas").get<std::size_t>();
  p.steps = h.at("steps").get<std::size_t>();
  p.x_dim = h.at("x_dim").get<std::size_t>();
  p.evals_per_chain = h.at("evals_per_chain").get<std::size_t>();
  if (blob.payload.size() != p.chains * p.steps * p.x_dim) throw FormatError("predictions payload size does not match its header");
  p.values = std::move(blob.payload);
  return p;
}

}  // namespace seqflow
