#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seqflow/core/binary_io.hpp"
#include "seqflow/core/error.hpp"
#include "seqflow/core/matrix.hpp"
#include "seqflow/core/mlp.hpp"

namespace seqflow {

inline constexpr char kCheckpointMagic[] = "SFMC";
inline constexpr std::uint8_t kCheckpointVersion = 1;

// Per-dimension z-scoring: normalized = (raw - mean) / std.
struct Normalization {
  std::vector<double> mean;
  std::vector<double> std;

  std::size_t dim() const { return mean.size(); }

  static Normalization identity(std::size_t d) { return {std::vector<double>(d, 0.0), std::vector<double>(d, 1.0)}; }

  bool operator==(const Normalization&) const = default;
};

enum class ModelKind { velocity, autoregressive };

// Everything needed to rebuild the model inputs around the raw MLP.
struct ModelMeta {
  ModelKind kind = ModelKind::velocity;
  std::string task;             // lorenz_estimate | burgers_forecast | toy
  std::size_t unit_dim = 1;     // state dimension of one physical time step
  std::size_t horizon = 1;      // predicted steps per physical time (H)
  std::size_t obs_dim = 1;
  std::size_t window = 0;       // observations in the conditioning window (L)
  std::string flow_path = "straight";
  std::uint64_t seed = 0;
  Normalization state_norm;     // unit_dim entries, tiled over the horizon
  Normalization obs_norm;       // obs_dim entries, tiled over the window

  std::size_t x_dim() const { return unit_dim * horizon; }
  std::size_t context_dim() const { return window * obs_dim; }

  bool operator==(const ModelMeta&) const = default;
};

struct Checkpoint {
  MlpConfig config;
  ModelMeta meta;
  VectorF params;
};

inline nlohmann::json to_json(const MlpConfig& c) {
  return {{"input_dim", c.input_dim},
          {"hidden_dims", c.hidden_dims},
          {"output_dim", c.output_dim},
          {"activation", to_string(c.activation)},
          {"time_embed_dim", c.time_embed_dim}};
}

inline MlpConfig mlp_config_from_json(const nlohmann::json& j) {
  MlpConfig c;
  c.input_dim = j.at("input_dim").get<std::size_t>();
  c.hidden_dims = j.at("hidden_dims").get<std::vector<std::size_t>>();
  c.output_dim = j.at("output_dim").get<std::size_t>();
  c.activation = activation_from_string(j.at("activation").get<std::string>());
  c.time_embed_dim = j.at("time_embed_dim").get<std::size_t>();
  validate(c);
  return c;
}

inline nlohmann::json to_json(const ModelMeta& m) {
  return {{"kind", m.kind == ModelKind::velocity ? "velocity" : "autoregressive"},
          {"task", m.task},
          {"unit_dim", m.unit_dim},
          {"horizon", m.horizon},
          {"obs_dim", m.obs_dim},
          {"window", m.window},
          {"flow_path", m.flow_path},
          {"seed", m.seed},
          {"state_norm", {{"mean", m.state_norm.mean}, {"std", m.state_norm.std}}},
          {"obs_norm", {{"mean", m.obs_norm.mean}, {"std", m.obs_norm.std}}}};
}

inline ModelMeta model_meta_from_json(const nlohmann::json& j) {
  ModelMeta m;
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "velocity") {
    m.kind = ModelKind::velocity;
  } else if (kind == "autoregressive") {
    m.kind = ModelKind::autoregressive;
  } else {
    throw FormatError("unknown model kind '" + kind + "'");
  }
  m.task = j.at("task").get<std::string>();
  m.unit_dim = j.at("unit_dim").get<std::size_t>();
  m.horizon = j.at("horizon").get<std::size_t>();
  m.obs_dim = j.at("obs_dim").get<std::size_t>();
  m.window = j.at("window").get<std::size_t>();
  m.flow_path = j.at("flow_path").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.state_norm.mean = j.at("state_norm").at("mean").get<std::vector<double>>();
  m.state_norm.std = j.at("state_norm").at("std").get<std::vector<double>>();
  m.obs_norm.mean = j.at("obs_norm").at("mean").get<std::vector<double>>();
  m.obs_norm.std = j.at("obs_norm").at("std").get<std::vector<double>>();
  if (m.state_norm.dim() != m.unit_dim || m.state_norm.std.size() != m.unit_dim) {
    throw FormatError("state normalization does not match unit_dim");
  }
  if (m.obs_norm.dim() != m.obs_dim || m.obs_norm.std.size() != m.obs_dim) {
    throw FormatError("observation normalization does not match obs_dim");
  }
  if (m.flow_path != "straight") throw FormatError("unsupported flow path '" + m.flow_path + "'");
  return m;
}

inline std::string encode_checkpoint(const Checkpoint& ck) {
  require_dim("checkpoint params", param_count(ck.config), static_cast<std::size_t>(ck.params.size()));
  require_finite(ck.params, "checkpoint params");
  nlohmann::json header = {{"mlp", to_json(ck.config)},
                           {"model", to_json(ck.meta)},
                           {"param_count", param_count(ck.config)}};
  return encode_container(std::string_view(kCheckpointMagic, 4), kCheckpointVersion, header.dump(),
                          std::span<const float>(ck.params.data(), static_cast<std::size_t>(ck.params.size())));
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  auto blob = decode_container(bytes, std::string_view(kCheckpointMagic, 4), kCheckpointVersion);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(blob.header);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  Checkpoint ck;
  ck.config = mlp_config_from_json(header.at("mlp"));
  ck.meta = model_meta_from_json(header.at("model"));
  const auto n = header.at("param_count").get<std::size_t>();
  if (n != param_count(ck.config) || n != blob.payload.size()) {
    throw FormatError("checkpoint parameter count mismatch: header " + std::to_string(n) + ", layout " +
                      std::to_string(param_count(ck.config)) + ", payload " + std::to_string(blob.payload.size()));
  }
  ck.params = Eigen::Map<const VectorF>(blob.payload.data(), static_cast<Eigen::Index>(n));
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  write_bytes(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_bytes(path)); }

}  // namespace seqflow
