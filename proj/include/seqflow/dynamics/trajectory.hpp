#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seqflow/core/binary_io.hpp"
#include "seqflow/core/error.hpp"
#include "seqflow/core/parallel.hpp"
#include "seqflow/core/rng.hpp"
#include "seqflow/dynamics/burgers.hpp"
#include "seqflow/dynamics/lorenz.hpp"

namespace seqflow {

inline constexpr char kTrajectoryMagic[] = "SFMD";
inline constexpr std::uint8_t kTrajectoryVersion = 1;

// n_traj trajectories of `steps` states and observations each, stored
// trajectory-major, then time, then dimension.
struct TrajectorySet {
  std::size_t n_traj = 0;
  std::size_t steps = 0;
  std::size_t state_dim = 0;
  std::size_t obs_dim = 0;
  std::vector<float> states;
  std::vector<float> observations;
  nlohmann::json meta = nlohmann::json::object();

  std::span<const float> state_stream(std::size_t i) const {
    return {states.data() + i * steps * state_dim, steps * state_dim};
  }
  std::span<const float> obs_stream(std::size_t i) const {
    return {observations.data() + i * steps * obs_dim, steps * obs_dim};
  }
  const float* state(std::size_t i, std::size_t t) const { return states.data() + (i * steps + t) * state_dim; }
  const float* obs(std::size_t i, std::size_t t) const { return observations.data() + (i * steps + t) * obs_dim; }

  // Steps usable as prediction times (steps minus the forecast look-ahead).
  std::size_t episode_length() const { return meta.value("episode_length", steps); }
  std::size_t horizon() const { return meta.value("horizon", std::size_t{1}); }
};

inline void validate(const TrajectorySet& ts) {
  require_dim("trajectory states", ts.n_traj * ts.steps * ts.state_dim, ts.states.size());
  require_dim("trajectory observations", ts.n_traj * ts.steps * ts.obs_dim, ts.observations.size());
  require_finite(std::span<const float>(ts.states), "trajectory states");
  require_finite(std::span<const float>(ts.observations), "trajectory observations");
}

inline std::string encode_trajectories(const TrajectorySet& ts) {
  validate(ts);
  nlohmann::json header = ts.meta;
  header["n_traj"] = ts.n_traj;
  header["steps"] = ts.steps;
  header["state_dim"] = ts.state_dim;
  header["obs_dim"] = ts.obs_dim;
  std::vector<float> payload;
  payload.reserve(ts.states.size() + ts.observations.size());
  payload.insert(payload.end(), ts.states.begin(), ts.states.end());
  payload.insert(payload.end(), ts.observations.begin(), ts.observations.end());
  return encode_container(std::string_view(kTrajectoryMagic, 4), kTrajectoryVersion, header.dump(), payload);
}

inline TrajectorySet decode_trajectories(std::string_view bytes) {
  auto blob = decode_container(bytes, std::string_view(kTrajectoryMagic, 4), kTrajectoryVersion);
  TrajectorySet ts;
  try {
    ts.meta = nlohmann::json::parse(blob.header);
    ts.n_traj = ts.meta.at("n_traj").get<std::size_t>();
    ts.steps = ts.meta.at("steps").get<std::size_t>();
    ts.state_dim = ts.meta.at("state_dim").get<std::size_t>();
    ts.obs_dim = ts.meta.at("obs_dim").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("trajectory header: ") + e.what());
  }
  const std::size_t ns = ts.n_traj * ts.steps * ts.state_dim;
  const std::size_t no = ts.n_traj * ts.steps * ts.obs_dim;
  if (blob.payload.size() != ns + no) {
    throw FormatError("trajectory payload has " + std::to_string(blob.payload.size()) + " values, header implies " +
                      std::to_string(ns + no));
  }
  ts.states.assign(blob.payload.begin(), blob.payload.begin() + static_cast<std::ptrdiff_t>(ns));
  ts.observations.assign(blob.payload.begin() + static_cast<std::ptrdiff_t>(ns), blob.payload.end());
  validate(ts);
  return ts;
}

inline void save_trajectories(const std::filesystem::path& path, const TrajectorySet& ts) {
  write_bytes(path, encode_trajectories(ts));
}

inline TrajectorySet load_trajectories(const std::filesystem::path& path) {
  return decode_trajectories(read_bytes(path));
}

struct DatasetConfig {
  std::string system = "lorenz";  // lorenz | burgers
  // lorenz
  double db = 0.0;
  double delta = 0.02;
  int burn_in = 200;
  // burgers
  double nu = 0.01;
  std::size_t substeps = 4;
  double forcing_std = 0.1;
  std::size_t horizon = 1;  // forecast look-ahead; extra frames stored after the episode
};

inline void validate(const DatasetConfig& c) {
  if (c.system != "lorenz" && c.system != "burgers") throw ValidationError("dataset system must be lorenz or burgers, got '" + c.system + "'");
  if (c.horizon < 1) throw ValidationError("dataset horizon must be >= 1");
  if (c.system == "lorenz" && c.horizon != 1) throw ValidationError("lorenz datasets are for estimation; horizon must be 1");
}

inline nlohmann::json to_json(const DatasetConfig& c) {
  if (c.system == "lorenz") return {{"system", c.system}, {"db", c.db}, {"delta", c.delta}, {"burn_in", c.burn_in}};
  return {{"system", c.system}, {"nu", c.nu}, {"substeps", c.substeps}, {"forcing_std", c.forcing_std}, {"horizon", c.horizon}};
}

namespace detail {

inline void fill_lorenz(TrajectorySet& ts, std::size_t i, const LorenzSystem& sys, const DatasetConfig& c, Rng& rng) {
  Vec3 s = lorenz_initial_state(sys, rng, c.burn_in);
  for (std::size_t t = 0; t < ts.steps; ++t) {
    s = lorenz_step(s, sys, rng);
    const Vec3 z = observe_lorenz(s, sys, rng);
    float* sp = ts.states.data() + (i * ts.steps + t) * 3;
    float* zp = ts.observations.data() + (i * ts.steps + t) * 3;
    for (int k = 0; k < 3; ++k) {
      sp[k] = static_cast<float>(s[k]);
      zp[k] = static_cast<float>(z[k]);
    }
  }
}

inline void fill_burgers(TrajectorySet& ts, std::size_t i, const BurgersSystem& sys, Rng& rng) {
  std::vector<double> u = burgers_initial_state(sys, rng);
  for (std::size_t t = 0; t < ts.steps; ++t) {
    u = burgers_step(u, burgers_forcing(sys, rng), sys);
    float* sp = ts.states.data() + (i * ts.steps + t) * sys.grid;
    float* zp = ts.observations.data() + (i * ts.steps + t) * sys.observed;
    for (std::size_t k = 0; k < sys.grid; ++k) sp[k] = static_cast<float>(u[k]);
    for (std::size_t k = 0; k < sys.observed; ++k) zp[k] = static_cast<float>(u[k]);
  }
}

}  // namespace detail

inline BurgersSystem burgers_system(const DatasetConfig& c) {
  BurgersSystem sys = BurgersSystem::make(c.nu, 64, c.substeps);
  sys.forcing_std = c.forcing_std;
  return sys;
}

// Trajectory i draws from its own substream (seed, "trajectory", i), so the
// result does not depend on scheduling. Burgers stores T + horizon frames so
// that every episode step has a full forecast target.
inline TrajectorySet generate_dataset(const DatasetConfig& c, std::size_t n_traj, std::size_t T, std::uint64_t seed) {
  validate(c);
  if (n_traj < 1 || T < 1) throw ValidationError("dataset counts must be >= 1");
  TrajectorySet ts;
  ts.n_traj = n_traj;
  ts.meta = {{"generator", to_json(c)}, {"seed", seed}, {"episode_length", T}, {"horizon", c.horizon}};
  if (c.system == "lorenz") {
    const LorenzSystem sys = LorenzSystem::from_db(c.db, c.delta);
    ts.steps = T;
    ts.state_dim = 3;
    ts.obs_dim = 3;
    ts.meta["r"] = sys.r;
    ts.meta["q"] = sys.q;
    ts.meta["rotation"] = std::vector<double>(sys.rotation.data(), sys.rotation.data() + 9);  // column-major
    ts.states.resize(n_traj * T * 3);
    ts.observations.resize(n_traj * T * 3);
    parallel_for(n_traj, [&](std::size_t i) {
      Rng rng(seed, "trajectory", i);
      detail::fill_lorenz(ts, i, sys, c, rng);
    });
  } else {
    const BurgersSystem sys = burgers_system(c);
    ts.steps = T + c.horizon;
    ts.state_dim = sys.grid;
    ts.obs_dim = sys.observed;
    ts.meta["dt"] = sys.dt;
    ts.meta["grid"] = sys.grid;
    ts.states.resize(n_traj * ts.steps * ts.state_dim);
    ts.observations.resize(n_traj * ts.steps * ts.obs_dim);
    parallel_for(n_traj, [&](std::size_t i) {
      Rng rng(seed, "trajectory", i);
      detail::fill_burgers(ts, i, sys, rng);
    });
  }
  validate(ts);
  return ts;
}

}  // namespace seqflow
