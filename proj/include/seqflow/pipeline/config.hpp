#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seqflow/core/error.hpp"
#include "seqflow/core/mlp.hpp"
#include "seqflow/core/rng.hpp"
#include "seqflow/dynamics/trajectory.hpp"
#include "seqflow/flowmatch/pairs.hpp"
#include "seqflow/flowmatch/training.hpp"

namespace seqflow {

enum class TaskKind { lorenz_estimate, burgers_forecast, toy };

inline const char* to_string(TaskKind t) {
  switch (t) {
    case TaskKind::lorenz_estimate: return "lorenz_estimate";
    case TaskKind::burgers_forecast: return "burgers_forecast";
    case TaskKind::toy: return "toy";
  }
  return "?";
}

inline TaskKind task_kind_from_string(const std::string& s) {
  if (s == "lorenz_estimate") return TaskKind::lorenz_estimate;
  if (s == "burgers_forecast") return TaskKind::burgers_forecast;
  if (s == "toy") return TaskKind::toy;
  throw ValidationError("config field 'task' must be lorenz_estimate, burgers_forecast or toy, got '" + s + "'");
}

struct NetSettings {
  std::vector<std::size_t> hidden{128, 128};
  Activation activation = Activation::gelu;
  std::size_t time_embed_dim = 16;
};

struct TrainSettings {
  std::size_t epochs = 30;
  std::size_t batch_size = 256;
  double lr = 2e-3;
  double lr_final = 1e-4;
};

struct SamplerSettings {
  std::size_t nfe = 1;
  std::size_t nfe_init = 10;            // steps of the pretrained draw that starts a sequential chain
  std::optional<double> tau_renoise;    // unset: per-noise-level default
  std::size_t samples = 16;             // replicas per stream for the energy score
};

struct EvalSettings {
  std::vector<std::string> methods{"pretrained@1", "pretrained@5", "sequential@1", "warmstart@1", "AR", "EKF", "UKF", "PF"};
  std::vector<std::size_t> nfe_sweep{1, 2, 3, 5, 10};
  std::size_t particles = 1000;
};

struct AblationSettings {
  std::vector<double> grid{0.0, 0.25, 0.5, 0.75, 1.0};
  std::vector<double> noise_db{0.0};
  bool ground_truth_pairs = false;  // also finetune from ground-truth pairs
};

struct SystemSettings {
  double delta = 0.02;
  int burn_in = 200;
  double nu = 0.01;
  std::size_t substeps = 4;
  double forcing_std = 0.1;
  double toy_rho = 0.9;
};

struct RunConfig {
  TaskKind task = TaskKind::lorenz_estimate;
  std::vector<double> noise_db{-10.0, 0.0, 10.0, 20.0};
  std::size_t horizon = 1;
  std::size_t window = 8;
  std::size_t episode_length = 100;
  std::size_t n_pretrain = 2000;
  std::size_t n_finetune = 500;
  std::size_t n_test = 100;
  std::uint64_t data_seed = 0;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  NetSettings net;
  TrainSettings pretrain;
  TrainSettings finetune{100, 256, 1e-3, 1e-4};
  TrainSettings baseline;  // autoregressive model; epochs = 0 skips it
  std::size_t nfe_rollout = 20;
  bool ground_truth_pairs = false;
  SamplerSettings sampler;
  EvalSettings eval;
  AblationSettings ablation;
  SystemSettings system;
  std::filesystem::path out = "runs";

  bool has_noise_levels() const { return task != TaskKind::burgers_forecast; }
  FlowTask flow_task() const { return task == TaskKind::burgers_forecast ? FlowTask::forecast : FlowTask::estimate; }
  TaskSpec task_spec() const { return {flow_task(), horizon, window}; }
};

// Re-noise level used when none is configured: more noise when the system
// is more uncertain.
inline double default_tau_renoise(const RunConfig& c, std::optional<double> db) {
  if (c.sampler.tau_renoise) return *c.sampler.tau_renoise;
  if (db && *db <= -10.0) return 0.4;
  return 0.3;
}

inline RunConfig default_config(TaskKind task) {
  RunConfig c;
  c.task = task;
  if (task == TaskKind::burgers_forecast) {
    c.noise_db.clear();
    c.horizon = 10;
    c.window = 4;
    c.episode_length = 16;
    c.n_pretrain = 2000;
    c.n_finetune = 1000;
    c.n_test = 50;
    c.net.hidden = {512, 512};
    c.pretrain = {40, 256, 1e-3, 1e-4};
    c.finetune = {60, 256, 1e-3, 1e-4};
    c.baseline = {40, 256, 1e-3, 1e-4};
    c.nfe_rollout = 10;
    c.eval.methods = {"pretrained@1", "pretrained@5", "sequential@1", "warmstart@1", "AR"};
    c.ablation.noise_db.clear();
  } else if (task == TaskKind::toy) {
    c.noise_db = {0.0};
    c.window = 4;
    c.episode_length = 20;
    c.n_pretrain = 200;
    c.n_finetune = 100;
    c.n_test = 20;
    c.seeds = {1};
    c.net.hidden = {32, 32};
    c.net.time_embed_dim = 8;
    c.pretrain = {5, 64, 2e-3, 1e-4};
    c.finetune = {5, 64, 1e-3, 1e-4};
    c.baseline = {5, 64, 2e-3, 1e-4};
    c.nfe_rollout = 5;
    c.sampler.nfe_init = 5;
    c.sampler.samples = 4;
    c.eval.nfe_sweep = {1, 2};
    c.eval.particles = 200;
    c.ablation.grid = {0.0, 0.5, 1.0};
  }
  return c;
}

namespace detail {

inline std::string field_error(const std::string& field, const std::string& rule) {
  return "config field '" + field + "' " + rule;
}

inline void check_keys(const nlohmann::json& j, const std::string& prefix, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ValidationError(field_error(prefix.empty() ? "<root>" : prefix, "must be an object"));
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw ValidationError("unknown config field '" + (prefix.empty() ? k : prefix + "." + k) + "'");
  }
}

template <class T>
T read_as(const nlohmann::json& v, const std::string& field) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ValidationError(field_error(field, "must be true or false"));
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_integer() || v.get<long long>() < 0) throw ValidationError(field_error(field, "must be a nonnegative integer"));
    } else if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) throw ValidationError(field_error(field, "must be a number"));
    } else if constexpr (std::is_same_v<T, int>) {
      if (!v.is_number_integer()) throw ValidationError(field_error(field, "must be an integer"));
    }
    return v.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError(field_error(field, "has the wrong type"));
  }
}

template <class T>
void read_into(const nlohmann::json& j, const std::string& key, const std::string& prefix, T& out) {
  if (!j.contains(key)) return;
  out = read_as<T>(j.at(key), prefix.empty() ? key : prefix + "." + key);
}

template <class T>
void read_list(const nlohmann::json& j, const std::string& key, const std::string& prefix, std::vector<T>& out) {
  if (!j.contains(key)) return;
  const std::string field = prefix.empty() ? key : prefix + "." + key;
  const auto& v = j.at(key);
  if (!v.is_array()) throw ValidationError(field_error(field, "must be a list"));
  out.clear();
  for (const auto& e : v) out.push_back(read_as<T>(e, field));
}

inline void read_strings(const nlohmann::json& j, const std::string& key, const std::string& field, std::vector<std::string>& out) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_array()) throw ValidationError(field_error(field, "must be a list"));
  out.clear();
  for (const auto& e : v) {
    if (!e.is_string()) throw ValidationError(field_error(field, "must contain strings"));
    out.push_back(e.get<std::string>());
  }
}

inline void read_train(const nlohmann::json& j, const std::string& key, TrainSettings& t) {
  if (!j.contains(key)) return;
  const auto& s = j.at(key);
  check_keys(s, key, {"epochs", "batch_size", "lr", "lr_final"});
  read_into(s, "epochs", key, t.epochs);
  read_into(s, "batch_size", key, t.batch_size);
  read_into(s, "lr", key, t.lr);
  read_into(s, "lr_final", key, t.lr_final);
}

inline nlohmann::json train_json(const TrainSettings& t) {
  return {{"epochs", t.epochs}, {"batch_size", t.batch_size}, {"lr", t.lr}, {"lr_final", t.lr_final}};
}

inline void check_train(const TrainSettings& t, const std::string& name, bool allow_zero_epochs) {
  if (!allow_zero_epochs && t.epochs < 1) throw ValidationError(field_error(name + ".epochs", "must be >= 1"));
  if (t.batch_size < 1) throw ValidationError(field_error(name + ".batch_size", "must be >= 1"));
  if (!(t.lr > 0.0) || !std::isfinite(t.lr)) throw ValidationError(field_error(name + ".lr", "must be positive"));
  if (!(t.lr_final > 0.0) || !std::isfinite(t.lr_final)) throw ValidationError(field_error(name + ".lr_final", "must be positive"));
}

}  // namespace detail

// Splits "pretrained@5" into ("pretrained", 5). Flow methods without '@' use
// `default_nfe`; baselines have nfe 0.
struct MethodSpec {
  std::string kind;  // pretrained | sequential | warmstart | AR | EKF | UKF | PF
  std::size_t nfe = 0;

  std::string label() const { return nfe > 0 ? kind + "@" + std::to_string(nfe) : kind; }
  bool is_flow() const { return kind == "pretrained" || kind == "sequential" || kind == "warmstart"; }
  bool is_filter() const { return kind == "EKF" || kind == "UKF" || kind == "PF"; }
};

inline MethodSpec parse_method(const std::string& s, std::size_t default_nfe) {
  const auto at = s.find('@');
  std::string kind = s.substr(0, at);
  std::string lower = kind, upper = kind;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char ch) { return static_cast<char>(std::toupper(ch)); });
  MethodSpec m;
  if (lower == "pretrained" || lower == "sequential" || lower == "warmstart") {
    m.kind = lower;
    if (at == std::string::npos) {
      m.nfe = default_nfe;
      return m;
    }
    const std::string n = s.substr(at + 1);
    if (n.empty() || n.size() > 6 || n.find_first_not_of("0123456789") != std::string::npos || std::stoul(n) < 1) {
      throw ValidationError("config field 'eval.methods': bad nfe in '" + s + "'");
    }
    m.nfe = std::stoul(n);
  } else if (upper == "AR" || upper == "EKF" || upper == "UKF" || upper == "PF") {
    if (at != std::string::npos) throw ValidationError("config field 'eval.methods': '" + s + "' takes no @nfe");
    m.kind = upper;
  } else {
    throw ValidationError("config field 'eval.methods': unknown method '" + s + "'");
  }
  return m;
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Checks every field against the module-level invariants.
inline void validate(const RunConfig& c) {
  using detail::field_error;
  if (c.has_noise_levels() && c.noise_db.empty()) throw ValidationError(field_error("noise_db", "needs at least one level"));
  if (!c.has_noise_levels() && !c.noise_db.empty()) throw ValidationError(field_error("noise_db", "applies only to lorenz_estimate and toy"));
  for (double db : c.noise_db) {
    if (!std::isfinite(db) || db < -40.0 || db > 60.0) throw ValidationError(field_error("noise_db", "levels must lie in [-40, 60] dB"));
  }
  if (std::set<double>(c.noise_db.begin(), c.noise_db.end()).size() != c.noise_db.size()) {
    throw ValidationError(field_error("noise_db", "has duplicate levels"));
  }
  if (c.horizon < 1) throw ValidationError(field_error("horizon", "must be >= 1"));
  if (c.flow_task() == FlowTask::estimate && c.horizon != 1) throw ValidationError(field_error("horizon", "must be 1 for estimation tasks"));
  if (c.window < 1) throw ValidationError(field_error("window", "must be >= 1"));
  if (c.episode_length < 2) throw ValidationError(field_error("episode_length", "must be >= 2"));
  if (c.n_pretrain < 1) throw ValidationError(field_error("n_pretrain", "must be >= 1"));
  if (c.n_finetune < 1) throw ValidationError(field_error("n_finetune", "must be >= 1"));
  if (c.n_test < 1) throw ValidationError(field_error("n_test", "must be >= 1"));
  if (c.seeds.empty()) throw ValidationError(field_error("seeds", "needs at least one seed"));
  if (std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() != c.seeds.size()) {
    throw ValidationError(field_error("seeds", "has duplicate seeds"));
  }
  if (c.net.hidden.empty()) throw ValidationError(field_error("net.hidden", "needs at least one layer"));
  for (auto h : c.net.hidden) {
    if (h < 1) throw ValidationError(field_error("net.hidden", "layer widths must be >= 1"));
  }
  if (c.net.time_embed_dim < 2 || c.net.time_embed_dim % 2 != 0) {
    throw ValidationError(field_error("net.time_embed_dim", "must be even and >= 2"));
  }
  detail::check_train(c.pretrain, "pretrain", false);
  detail::check_train(c.finetune, "finetune", false);
  detail::check_train(c.baseline, "baseline", true);
  if (c.nfe_rollout < 1) throw ValidationError(field_error("pairs.nfe_rollout", "must be >= 1"));
  if (c.sampler.nfe < 1) throw ValidationError(field_error("sampler.nfe", "must be >= 1"));
  if (c.sampler.nfe_init < 1) throw ValidationError(field_error("sampler.nfe_init", "must be >= 1"));
  if (c.sampler.tau_renoise && !(*c.sampler.tau_renoise >= 0.0 && *c.sampler.tau_renoise <= 1.0)) {
    throw ValidationError(field_error("sampler.tau_renoise", "must lie in [0, 1]"));
  }
  if (c.sampler.samples < 2) throw ValidationError(field_error("sampler.samples", "must be >= 2 for the energy score"));
  if (c.eval.methods.empty()) throw ValidationError(field_error("eval.methods", "needs at least one method"));
  for (const auto& m : c.eval.methods) {
    const auto spec = parse_method(m, c.sampler.nfe);
    if (spec.is_filter() && c.task == TaskKind::burgers_forecast) {
      throw ValidationError(field_error("eval.methods", "filter baseline '" + m + "' needs a known state-space model; not available for burgers_forecast"));
    }
  }
  for (auto n : c.eval.nfe_sweep) {
    if (n < 1) throw ValidationError(field_error("eval.nfe_sweep", "entries must be >= 1"));
  }
  if (c.eval.particles < 2) throw ValidationError(field_error("eval.particles", "must be >= 2"));
  if (c.ablation.grid.empty()) throw ValidationError(field_error("ablation.grid", "needs at least one value"));
  for (double t : c.ablation.grid) {
    if (!(t >= 0.0 && t <= 1.0)) throw ValidationError(field_error("ablation.grid", "values must lie in [0, 1]"));
  }
  for (double db : c.ablation.noise_db) {
    if (std::find(c.noise_db.begin(), c.noise_db.end(), db) == c.noise_db.end()) {
      throw ValidationError(field_error("ablation.noise_db", "levels must be listed in noise_db"));
    }
  }
  if (!(c.system.delta > 0.0) || !std::isfinite(c.system.delta)) throw ValidationError(field_error("system.delta", "must be positive"));
  if (c.system.burn_in < 0) throw ValidationError(field_error("system.burn_in", "must be >= 0"));
  if (!(c.system.nu > 0.0)) throw ValidationError(field_error("system.nu", "must be positive"));
  if (c.system.substeps < 1) throw ValidationError(field_error("system.substeps", "must be >= 1"));
  if (!(c.system.forcing_std >= 0.0)) throw ValidationError(field_error("system.forcing_std", "must be >= 0"));
  if (!(std::abs(c.system.toy_rho) < 1.0)) throw ValidationError(field_error("system.toy_rho", "must lie in (-1, 1)"));
  if (c.out.empty()) throw ValidationError(field_error("out", "must be a directory path"));
}

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["task"] = to_string(c.task);
  j["noise_db"] = c.noise_db;
  j["horizon"] = c.horizon;
  j["window"] = c.window;
  j["episode_length"] = c.episode_length;
  j["n_pretrain"] = c.n_pretrain;
  j["n_finetune"] = c.n_finetune;
  j["n_test"] = c.n_test;
  j["data_seed"] = c.data_seed;
  j["seeds"] = c.seeds;
  j["net"] = {{"hidden", c.net.hidden}, {"activation", to_string(c.net.activation)}, {"time_embed_dim", c.net.time_embed_dim}};
  j["pretrain"] = detail::train_json(c.pretrain);
  j["finetune"] = detail::train_json(c.finetune);
  j["baseline"] = detail::train_json(c.baseline);
  j["pairs"] = {{"nfe_rollout", c.nfe_rollout}, {"ground_truth", c.ground_truth_pairs}};
  j["sampler"] = {{"nfe", c.sampler.nfe}, {"nfe_init", c.sampler.nfe_init}, {"samples", c.sampler.samples}};
  j["sampler"]["tau_renoise"] = c.sampler.tau_renoise ? nlohmann::json(*c.sampler.tau_renoise) : nlohmann::json(nullptr);
  j["eval"] = {{"methods", c.eval.methods}, {"nfe_sweep", c.eval.nfe_sweep}, {"particles", c.eval.particles}};
  j["ablation"] = {{"grid", c.ablation.grid}, {"noise_db", c.ablation.noise_db}, {"ground_truth_pairs", c.ablation.ground_truth_pairs}};
  j["system"] = {{"delta", c.system.delta},      {"burn_in", c.system.burn_in},         {"nu", c.system.nu},
                 {"substeps", c.system.substeps}, {"forcing_std", c.system.forcing_std}, {"toy_rho", c.system.toy_rho}};
  j["out"] = c.out.generic_string();
  return j;
}

// Task defaults overlaid with the keys present in `j`. Unknown keys are
// rejected so that typos do not silently fall back to defaults.
inline RunConfig config_from_json(const nlohmann::json& j) {
  using namespace detail;
  check_keys(j, "", {"task", "noise_db", "horizon", "window", "episode_length", "n_pretrain", "n_finetune", "n_test", "data_seed",
                     "seeds", "net", "pretrain", "finetune", "baseline", "pairs", "sampler", "eval", "ablation", "system", "out"});
  TaskKind task = TaskKind::lorenz_estimate;
  if (j.contains("task")) {
    if (!j["task"].is_string()) throw ValidationError(field_error("task", "must be a string"));
    task = task_kind_from_string(j["task"].get<std::string>());
  }
  RunConfig c = default_config(task);
  read_list(j, "noise_db", "", c.noise_db);
  read_into(j, "horizon", "", c.horizon);
  read_into(j, "window", "", c.window);
  read_into(j, "episode_length", "", c.episode_length);
  read_into(j, "n_pretrain", "", c.n_pretrain);
  read_into(j, "n_finetune", "", c.n_finetune);
  read_into(j, "n_test", "", c.n_test);
  read_into(j, "data_seed", "", c.data_seed);
  read_list(j, "seeds", "", c.seeds);
  if (j.contains("net")) {
    const auto& n = j["net"];
    check_keys(n, "net", {"hidden", "activation", "time_embed_dim"});
    read_list(n, "hidden", "net", c.net.hidden);
    if (n.contains("activation")) {
      if (!n["activation"].is_string()) throw ValidationError(field_error("net.activation", "must be a string"));
      try {
        c.net.activation = activation_from_string(n["activation"].get<std::string>());
      } catch (const ValidationError&) {
        throw ValidationError(field_error("net.activation", "must be tanh or gelu"));
      }
    }
    read_into(n, "time_embed_dim", "net", c.net.time_embed_dim);
  }
  read_train(j, "pretrain", c.pretrain);
  read_train(j, "finetune", c.finetune);
  read_train(j, "baseline", c.baseline);
  if (j.contains("pairs")) {
    check_keys(j["pairs"], "pairs", {"nfe_rollout", "ground_truth"});
    read_into(j["pairs"], "nfe_rollout", "pairs", c.nfe_rollout);
    read_into(j["pairs"], "ground_truth", "pairs", c.ground_truth_pairs);
  }
  if (j.contains("sampler")) {
    const auto& s = j["sampler"];
    check_keys(s, "sampler", {"nfe", "nfe_init", "tau_renoise", "samples"});
    read_into(s, "nfe", "sampler", c.sampler.nfe);
    read_into(s, "nfe_init", "sampler", c.sampler.nfe_init);
    read_into(s, "samples", "sampler", c.sampler.samples);
    if (s.contains("tau_renoise")) {
      if (s["tau_renoise"].is_null()) {
        c.sampler.tau_renoise.reset();
      } else {
        c.sampler.tau_renoise = read_as<double>(s["tau_renoise"], "sampler.tau_renoise");
      }
    }
  }
  if (j.contains("eval")) {
    const auto& e = j["eval"];
    check_keys(e, "eval", {"methods", "nfe_sweep", "particles"});
    read_strings(e, "methods", "eval.methods", c.eval.methods);
    read_list(e, "nfe_sweep", "eval", c.eval.nfe_sweep);
    read_into(e, "particles", "eval", c.eval.particles);
  }
  if (j.contains("ablation")) {
    const auto& a = j["ablation"];
    check_keys(a, "ablation", {"grid", "noise_db", "ground_truth_pairs"});
    read_list(a, "grid", "ablation", c.ablation.grid);
    read_list(a, "noise_db", "ablation", c.ablation.noise_db);
    read_into(a, "ground_truth_pairs", "ablation", c.ablation.ground_truth_pairs);
  }
  if (j.contains("system")) {
    const auto& s = j["system"];
    check_keys(s, "system", {"delta", "burn_in", "nu", "substeps", "forcing_std", "toy_rho"});
    read_into(s, "delta", "system", c.system.delta);
    read_into(s, "burn_in", "system", c.system.burn_in);
    read_into(s, "nu", "system", c.system.nu);
    read_into(s, "substeps", "system", c.system.substeps);
    read_into(s, "forcing_std", "system", c.system.forcing_std);
    read_into(s, "toy_rho", "system", c.system.toy_rho);
  }
  if (j.contains("out")) {
    if (!j["out"].is_string()) throw ValidationError(field_error("out", "must be a string"));
    c.out = j["out"].get<std::string>();
  }
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot read config file '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

// Named substreams of a master seed.
inline std::uint64_t data_seed(const RunConfig& c, const std::string& split) { return derive_seed(c.data_seed, "data/" + split); }
inline std::uint64_t train_seed(std::uint64_t master) { return derive_seed(master, "train"); }
inline std::uint64_t eval_seed(std::uint64_t master) { return derive_seed(master, "eval"); }

inline TrainConfig make_train_config(const RunConfig& c, const TrainSettings& t, std::uint64_t seed) {
  TrainConfig tc;
  tc.epochs = t.epochs;
  tc.batch_size = t.batch_size;
  tc.lr = t.lr;
  tc.lr_final = t.lr_final;
  tc.seed = seed;
  tc.hidden = c.net.hidden;
  tc.activation = c.net.activation;
  tc.time_embed_dim = c.net.time_embed_dim;
  return tc;
}

}  // namespace seqflow
