#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seqflow/core/binary_io.hpp"
#include "seqflow/core/checkpoint.hpp"
#include "seqflow/core/parallel.hpp"
#include "seqflow/core/rng.hpp"
#include "seqflow/dynamics/trajectory.hpp"
#include "seqflow/filters/autoregressive.hpp"
#include "seqflow/filters/filters.hpp"
#include "seqflow/flowmatch/inference.hpp"
#include "seqflow/flowmatch/pairs.hpp"
#include "seqflow/flowmatch/training.hpp"
#include "seqflow/metrics/metrics.hpp"
#include "seqflow/metrics/report.hpp"
#include "seqflow/pipeline/artifacts.hpp"
#include "seqflow/pipeline/config.hpp"
#include "seqflow/theory/theory.hpp"

namespace seqflow {

// Progress lines with elapsed wall time; never written into artifacts.
class Progress {
 public:
  explicit Progress(std::ostream* os = nullptr) : os_(os), start_(std::chrono::steady_clock::now()) {}

  void operator()(const std::string& msg) const {
    if (!os_) return;
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    std::ostringstream line;
    line << "[" << std::fixed << std::setprecision(1) << s << "s] " << msg << '\n';
    *os_ << line.str() << std::flush;
  }

 private:
  std::ostream* os_;
  std::chrono::steady_clock::time_point start_;
};

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) { write_bytes(path, text); }

// Training log without wall times, so that reruns give identical files.
inline std::string epoch_log_jsonl(const std::vector<EpochLog>& logs) {
  std::string out;
  for (const auto& l : logs) out += nlohmann::json{{"epoch", l.epoch}, {"loss", l.loss}}.dump() + '\n';
  return out;
}

inline void write_config_echo(const RunConfig& c, const std::string& command) {
  nlohmann::json j = {{"command", command}, {"config", to_json(c)}};
  write_text(Layout{c.out}.reports() / (command + ".config.json"), j.dump(2) + '\n');
}

inline std::string level_label(const RunConfig& c, const Level& l) { return std::string(to_string(c.task)) + "/" + l.name(); }

}  // namespace detail

// Writes pretrain, finetune and test splits for every level.
inline void cmd_simulate(const RunConfig& c, const Progress& progress = Progress{}) {
  validate(c);
  const Layout lay{c.out};
  for (const auto& l : levels(c)) {
    for (const char* split : {"pretrain", "finetune", "test"}) {
      save_trajectories(lay.data(l, split), make_split(c, l, split));
      progress("simulate " + l.name() + " " + split);
    }
  }
}

// Gaussian-source training per level and seed, plus the autoregressive
// baseline when baseline.epochs > 0.
inline void cmd_pretrain(const RunConfig& c, const Progress& progress = Progress{}) {
  validate(c);
  const Layout lay{c.out};
  const TaskSpec spec = c.task_spec();
  std::vector<std::filesystem::path> need;
  for (const auto& l : levels(c)) need.push_back(lay.data(l, "pretrain"));
  require_artifacts(need);
  for (const auto& l : levels(c)) {
    const TrajectorySet ts = load_trajectories(lay.data(l, "pretrain"));
    for (std::uint64_t seed : c.seeds) {
      const TrainConfig tc = make_train_config(c, c.pretrain, train_seed(seed));
      const ModelMeta meta = make_model_meta(spec, ts, to_string(c.task), tc.seed);
      std::vector<EpochLog> logs;
      const Checkpoint ck = pretrain(pretrain_dataset(spec, ts, meta), meta, tc, {}, &logs);
      save_checkpoint(lay.pretrained(l, seed), ck);
      detail::write_text(lay.log(l, seed, "pretrain"), detail::epoch_log_jsonl(logs));
      progress("pretrain " + l.name() + " seed " + std::to_string(seed) + " loss " + std::to_string(logs.back().loss));
      if (c.baseline.epochs > 0) {
        const TrainConfig bc = make_train_config(c, c.baseline, train_seed(seed));
        std::vector<EpochLog> blogs;
        const Checkpoint ar = train_ar_baseline(ar_dataset(spec, ts, meta), make_ar_meta(meta), bc, {}, &blogs);
        save_checkpoint(lay.ar(l, seed), ar);
        detail::write_text(lay.log(l, seed, "baseline"), detail::epoch_log_jsonl(blogs));
        progress("baseline " + l.name() + " seed " + std::to_string(seed) + " loss " + std::to_string(blogs.back().loss));
      }
    }
  }
}

inline std::vector<FinetunePair> make_pairs(const RunConfig& c, const Level& l, std::uint64_t seed, bool ground_truth) {
  const Layout lay{c.out};
  require_artifacts({lay.pretrained(l, seed), lay.data(l, "finetune")});
  const FlowModel pm(load_checkpoint(lay.pretrained(l, seed)));
  const TrajectorySet ts = load_trajectories(lay.data(l, "finetune"));
  PairOptions po;
  po.nfe_rollout = c.nfe_rollout;
  po.ground_truth = ground_truth;
  po.seed = derive_seed(seed, "pairs");
  return build_finetune_pairs(pm, ts, c.task_spec(), po);
}

inline void write_pairs(const RunConfig& c, const Level& l, std::uint64_t seed, bool ground_truth) {
  const auto pairs = make_pairs(c, l, seed, ground_truth);
  const nlohmann::json info = {{"mode", pair_mode(ground_truth)}, {"nfe_rollout", c.nfe_rollout}, {"seed", seed}};
  write_bytes(Layout{c.out}.pairs(l, seed, ground_truth), encode_pairs(pairs, info));
}

// Finetuning pairs per level and seed in the configured mode.
inline void cmd_build_pairs(const RunConfig& c, const Progress& progress = Progress{}) {
  validate(c);
  const Layout lay{c.out};
  std::vector<std::filesystem::path> need;
  for (const auto& l : levels(c)) {
    need.push_back(lay.data(l, "finetune"));
    for (std::uint64_t seed : c.seeds) need.push_back(lay.pretrained(l, seed));
  }
  require_artifacts(need);
  for (const auto& l : levels(c)) {
    for (std::uint64_t seed : c.seeds) {
      write_pairs(c, l, seed, c.ground_truth_pairs);
      progress(std::string("pairs ") + pair_mode(c.ground_truth_pairs) + " " + l.name() + " seed " + std::to_string(seed));
    }
  }
}

inline void finetune_one(const RunConfig& c, const Level& l, std::uint64_t seed, double tau, bool ground_truth) {
  const Layout lay{c.out};
  require_artifacts({lay.pretrained(l, seed), lay.pairs(l, seed, ground_truth)});
  const Checkpoint pre = load_checkpoint(lay.pretrained(l, seed));
  const auto pairs = decode_pairs(read_bytes(lay.pairs(l, seed, ground_truth)));
  const TrainConfig tc = make_train_config(c, c.finetune, train_seed(seed));
  std::vector<EpochLog> logs;
  const Checkpoint ck = finetune_sequential(pre, finetune_dataset(pairs, pre.meta), tau, tc, {}, &logs);
  save_checkpoint(lay.sequential(l, seed, tau, ground_truth), ck);
  detail::write_text(lay.log(l, seed, "finetune_tau" + tau_tag(tau) + "_" + pair_mode(ground_truth)), detail::epoch_log_jsonl(logs));
}

// Sequential finetuning per level and seed at the configured re-noise level.
inline void cmd_finetune(const RunConfig& c, const Progress& progress = Progress{}) {
  validate(c);
  const Layout lay{c.out};
  std::vector<std::filesystem::path> need;
  for (const auto& l : levels(c)) {
    for (std::uint64_t seed : c.seeds) {
      need.push_back(lay.pretrained(l, seed));
      need.push_back(lay.pairs(l, seed, c.ground_truth_pairs));
    }
  }
  require_artifacts(need);
  for (const auto& l : levels(c)) {
    const double tau = default_tau_renoise(c, l.db);
    for (std::uint64_t seed : c.seeds) {
      finetune_one(c, l, seed, tau, c.ground_truth_pairs);
      progress("finetune " + l.name() + " seed " + std::to_string(seed) + " tau_r " + tau_tag(tau));
    }
  }
}

// Artifacts one method needs for one level and seed.
inline std::vector<std::filesystem::path> method_inputs(const RunConfig& c, const Level& l, std::uint64_t seed, const MethodSpec& m) {
  const Layout lay{c.out};
  std::vector<std::filesystem::path> out{lay.data(l, "test")};
  if (m.is_flow()) out.push_back(lay.pretrained(l, seed));
  if (m.kind == "sequential") out.push_back(lay.sequential(l, seed, default_tau_renoise(c, l.db), c.ground_truth_pairs));
  if (m.kind == "AR") out.push_back(lay.ar(l, seed));
  if (m.is_filter()) out.push_back(lay.data(l, "pretrain"));
  return out;
}

// Models and data for one level, loaded lazily and shared across methods.
class LevelContext {
 public:
  LevelContext(const RunConfig& c, Level l) : c_(c), l_(std::move(l)), lay_{c.out}, test_(load_trajectories(lay_.data(l_, "test"))) {}

  const TrajectorySet& test() const { return test_; }
  const Level& level() const { return l_; }

  const FlowModel& pretrained(std::uint64_t seed) { return cached(pre_, seed, lay_.pretrained(l_, seed)); }
  const FlowModel& sequential(std::uint64_t seed, double tau, bool gt) { return cached(seq_, seed, lay_.sequential(l_, seed, tau, gt)); }

  const Checkpoint& ar(std::uint64_t seed) {
    auto it = ar_.find(seed);
    if (it == ar_.end()) it = ar_.emplace(seed, load_checkpoint(lay_.ar(l_, seed))).first;
    return it->second;
  }

  const GaussianBelief& prior() {
    if (!prior_) {
      const TrajectorySet ts = load_trajectories(lay_.data(l_, "pretrain"));
      prior_ = climatology_prior(make_model_meta(c_.task_spec(), ts, to_string(c_.task), 0));
    }
    return *prior_;
  }

  void forget_sequential() { seq_.clear(); }

 private:
  static const FlowModel& cached(std::map<std::string, FlowModel>& cache, std::uint64_t seed, const std::filesystem::path& p) {
    const std::string key = std::to_string(seed) + ":" + p.string();
    auto it = cache.find(key);
    if (it == cache.end()) it = cache.emplace(key, FlowModel(load_checkpoint(p))).first;
    return it->second;
  }

  const RunConfig& c_;
  Level l_;
  Layout lay_;
  TrajectorySet test_;
  std::map<std::string, FlowModel> pre_;
  std::map<std::string, FlowModel> seq_;
  std::map<std::uint64_t, Checkpoint> ar_;
  std::optional<GaussianBelief> prior_;
};

inline Predictions filter_predictions(const RunConfig& c, LevelContext& ctx, std::uint64_t seed, FilterKind kind) {
  const TrajectorySet& ts = ctx.test();
  const StateSpaceModel model = task_model(c, ctx.level());
  const GaussianBelief& prior = ctx.prior();
  const std::size_t steps = prediction_steps(c.task_spec(), ts);
  Predictions out;
  out.chains = ts.n_traj;
  out.steps = steps;
  out.x_dim = ts.state_dim;
  out.values.assign(out.chains * steps * out.x_dim, 0.0f);
  const std::uint64_t es = eval_seed(seed);
  parallel_for(ts.n_traj, [&](std::size_t i) {
    Rng rng(es, "pf", i);
    const auto means = run_filter(kind, model, prior, ts.obs_stream(i).subspan(0, steps * ts.obs_dim), rng, c.eval.particles);
    for (std::size_t k = 0; k < means.size(); ++k) out.values[i * steps * out.x_dim + k] = static_cast<float>(means[k]);
  });
  return out;
}

// Predictions of one method on the test split. Flow methods draw
// `sampler.samples` replicas per stream; all methods of a seed share the
// evaluation substream.
inline Predictions run_method(const RunConfig& c, LevelContext& ctx, std::uint64_t seed, const MethodSpec& m,
                              std::optional<double> tau_override = std::nullopt, bool ground_truth = false) {
  const TrajectorySet& ts = ctx.test();
  const ObservationBatch obs = ObservationBatch::from(ts, prediction_steps(c.task_spec(), ts));
  const double tau = tau_override ? *tau_override : default_tau_renoise(c, ctx.level().db);
  if (m.is_flow()) {
    SamplerConfig s;
    s.nfe = m.nfe;
    s.tau_renoise = tau;
    s.seed = eval_seed(seed);
    s.nfe_init = m.kind == "pretrained" ? 0 : c.sampler.nfe_init;
    InferOptions opt;
    opt.replicas = c.sampler.samples;
    opt.mode = m.kind == "pretrained" ? InferMode::restart : (m.kind == "sequential" ? InferMode::sequential : InferMode::warm_start);
    const FlowModel& pm = ctx.pretrained(seed);
    const FlowModel& later = m.kind == "sequential" ? ctx.sequential(seed, tau, tau_override ? ground_truth : c.ground_truth_pairs) : pm;
    return sequential_infer(pm, later, obs, s, opt);
  }
  if (m.kind == "AR") return ar_predict_streams(ctx.ar(seed), obs, c.horizon, prefix_observer(ts.obs_dim));
  if (m.kind == "EKF") return filter_predictions(c, ctx, seed, FilterKind::ekf);
  if (m.kind == "UKF") return filter_predictions(c, ctx, seed, FilterKind::ukf);
  if (m.kind == "PF") return filter_predictions(c, ctx, seed, FilterKind::pf);
  throw ValidationError("unknown method '" + m.kind + "'");
}

struct SeedScore {
  std::map<std::string, double> metrics;
  std::vector<double> lead_time_rmse;
};

namespace detail {

// Rank correlation between `v` and its index, with average ranks for ties.
inline double spearman_vs_index(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = 0.5 * static_cast<double>(i + j);
    i = j + 1;
  }
  const double mean = 0.5 * static_cast<double>(n - 1);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(i) - mean;
    const double y = rank[i] - mean;
    sxy += x * y;
    sxx += x * x;
    syy += y * y;
  }
  return syy > 0.0 ? sxy / std::sqrt(sxx * syy) : 0.0;
}

}  // namespace detail

// Errors of every replica against the task targets. Point predictions
// (one replica) enter the energy score as a degenerate ensemble, where it
// reduces to the mean absolute error.
inline SeedScore score_predictions(const Predictions& p, const TrajectorySet& ts, const TaskSpec& spec) {
  const std::size_t streams = ts.n_traj;
  require_dim("prediction chains", streams * p.replicas, p.chains);
  require_dim("prediction steps", prediction_steps(spec, ts), p.steps);
  require_dim("prediction width", spec.horizon * ts.state_dim, p.x_dim);
  const std::size_t xd = p.x_dim;
  const std::size_t unit = ts.state_dim;
  const std::size_t m = std::max<std::size_t>(2, p.replicas);
  struct Partial {
    double sq = 0.0;
    double es = 0.0;
    std::vector<double> lead;
  };
  std::vector<Partial> part(streams);
  parallel_for(streams, [&](std::size_t i) {
    Partial& out = part[i];
    out.lead.assign(spec.horizon, 0.0);
    std::vector<double> samples(m * xd);
    for (std::size_t t = 0; t < p.steps; ++t) {
      const auto truth = task_target(spec, ts, i, t);
      for (std::size_t r = 0; r < m; ++r) {
        const float* x = p.at(i * p.replicas + std::min(r, p.replicas - 1), t);
        for (std::size_t k = 0; k < xd; ++k) samples[r * xd + k] = x[k];
      }
      for (std::size_t r = 0; r < p.replicas; ++r) {
        for (std::size_t k = 0; k < xd; ++k) {
          const double d = samples[r * xd + k] - truth[k];
          out.sq += d * d;
          out.lead[k / unit] += d * d;
        }
      }
      out.es += energy_score(samples, m, truth);
    }
  });
  double sq = 0.0, es = 0.0;
  std::vector<double> lead(spec.horizon, 0.0);
  for (const auto& pt : part) {
    sq += pt.sq;
    es += pt.es;
    for (std::size_t h = 0; h < spec.horizon; ++h) lead[h] += pt.lead[h];
  }
  const double count = static_cast<double>(p.chains * p.steps);
  SeedScore s;
  const double mse = sq / (count * static_cast<double>(xd));
  s.metrics["rmse"] = std::sqrt(mse);
  s.metrics["log_mse_db"] = db_from_mse(mse);
  s.metrics["energy_score"] = es / static_cast<double>(streams * p.steps);
  s.metrics["evals_per_step"] = static_cast<double>(p.evals_per_chain) / static_cast<double>(p.steps);
  if (spec.task == FlowTask::forecast) {
    for (auto& v : lead) v = std::sqrt(v / (count * static_cast<double>(unit)));
    s.lead_time_rmse = lead;
    if (lead.size() >= 2) s.metrics["lead_rmse_spearman"] = detail::spearman_vs_index(lead);
  }
  return s;
}

// Per-seed scores folded into one report row group.
inline EvalReport aggregate(const std::string& task, const std::string& method, std::size_t nfe, const std::vector<std::uint64_t>& seeds,
                            const std::vector<SeedScore>& scores) {
  EvalReport r;
  r.task = task;
  r.method = method;
  r.nfe = nfe;
  r.seeds = seeds;
  for (const auto& [name, v] : scores.front().metrics) {
    std::vector<double> per_seed;
    for (const auto& s : scores) per_seed.push_back(s.metrics.at(name));
    r.add(name, per_seed);
  }
  if (!scores.front().lead_time_rmse.empty()) {
    r.lead_time_rmse.assign(scores.front().lead_time_rmse.size(), 0.0);
    for (const auto& s : scores) {
      for (std::size_t h = 0; h < s.lead_time_rmse.size(); ++h) r.lead_time_rmse[h] += s.lead_time_rmse[h];
    }
    for (auto& v : r.lead_time_rmse) v /= static_cast<double>(scores.size());
  }
  return r;
}

inline std::vector<MethodSpec> configured_methods(const RunConfig& c) {
  std::vector<MethodSpec> out;
  for (const auto& s : c.eval.methods) out.push_back(parse_method(s, c.sampler.nfe));
  return out;
}

// Configured methods followed by the pretrained NFE sweep, without repeats.
inline std::vector<MethodSpec> eval_methods(const RunConfig& c) {
  std::vector<MethodSpec> out = configured_methods(c);
  for (std::size_t n : c.eval.nfe_sweep) {
    const MethodSpec m{"pretrained", n};
    if (std::none_of(out.begin(), out.end(), [&](const MethodSpec& x) { return x.label() == m.label(); })) out.push_back(m);
  }
  return out;
}

inline void require_method_inputs(const RunConfig& c, const std::vector<MethodSpec>& methods) {
  std::vector<std::filesystem::path> need;
  for (const auto& l : levels(c)) {
    for (std::uint64_t seed : c.seeds) {
      for (const auto& m : methods) {
        for (auto& p : method_inputs(c, l, seed, m)) {
          if (std::find(need.begin(), need.end(), p) == need.end()) need.push_back(std::move(p));
        }
      }
    }
  }
  require_artifacts(need);
}

// Writes the predictions of the configured methods per level and seed.
inline void cmd_infer(const RunConfig& c, const Progress& progress = Progress{}) {
  validate(c);
  const auto methods = configured_methods(c);
  require_method_inputs(c, methods);
  const Layout lay{c.out};
  for (const auto& l : levels(c)) {
    LevelContext ctx(c, l);
    for (std::uint64_t seed : c.seeds) {
      for (const auto& m : methods) {
        const Predictions p = run_method(c, ctx, seed, m);
        const nlohmann::json info = {{"method", m.label()}, {"nfe", m.nfe}, {"seed", seed}, {"level", l.name()}};
        write_bytes(lay.predictions(l, seed, m.label()), encode_predictions(p, info));
        progress("infer " + l.name() + " seed " + std::to_string(seed) + " " + m.label());
      }
    }
  }
}

inline nlohmann::json level_extra(const RunConfig& c, const Level& l) {
  nlohmann::json e = {{"level", l.name()}, {"config", to_json(c)}};
  e["noise_db"] = l.db ? nlohmann::json(*l.db) : nlohmann::json(nullptr);
  return e;
}

inline void write_reports(const RunConfig& c, const std::string& name, const std::vector<EvalReport>& reports) {
  const Layout lay{c.out};
  std::ostringstream csv, jsonl;
  write_csv(csv, reports);
  write_jsonl(jsonl, reports);
  write_bytes(lay.reports() / (name + ".csv"), csv.str());
  write_bytes(lay.reports() / (name + ".jsonl"), jsonl.str());
}

// Runs every method and the NFE sweep on the test split and writes
// reports/eval.{csv,jsonl}.
inline std::vector<EvalReport> cmd_eval(const RunConfig& c, const Progress& progress = Progress{}) {
  validate(c);
  const auto methods = eval_methods(c);
  require_method_inputs(c, methods);
  std::vector<EvalReport> reports;
  for (const auto& l : levels(c)) {
    LevelContext ctx(c, l);
    for (const auto& m : methods) {
      std::vector<SeedScore> scores;
      for (std::uint64_t seed : c.seeds) {
        scores.push_back(score_predictions(run_method(c, ctx, seed, m), ctx.test(), c.task_spec()));
      }
      EvalReport r = aggregate(detail::level_label(c, l), m.label(), m.nfe, c.seeds, scores);
      r.extra = level_extra(c, l);
      if (m.kind == "sequential" || m.kind == "warmstart") r.extra["tau_renoise"] = default_tau_renoise(c, l.db);
      progress("eval " + l.name() + " " + m.label() + " rmse " + std::to_string(r.metrics.at("rmse").mean) + " log_mse_db " +
               std::to_string(r.metrics.at("log_mse_db").mean));
      reports.push_back(std::move(r));
    }
  }
  write_reports(c, "eval", reports);
  detail::write_config_echo(c, "eval");
  return reports;
}

inline std::vector<Level> ablation_levels(const RunConfig& c) {
  if (!c.has_noise_levels()) return {Level{}};
  std::vector<Level> out;
  for (double db : c.ablation.noise_db) out.push_back(Level{db});
  return out;
}

inline std::string ablation_method(double tau, bool ground_truth) {
  return "sequential[tau_r=" + tau_tag(tau) + ";pairs=" + pair_mode(ground_truth) + "]";
}

// For each ablation level, pair mode and re-noise level: finetune from the
// pretrained model, then score sequential inference at sampler.nfe. Pairs
// are built when absent. Writes reports/ablation.{csv,jsonl}.
inline std::vector<EvalReport> cmd_ablate_renoise(const RunConfig& c, const Progress& progress = Progress{}) {
  validate(c);
  const Layout lay{c.out};
  std::vector<bool> modes{false};
  if (c.ablation.ground_truth_pairs) modes.push_back(true);
  std::vector<std::filesystem::path> need;
  for (const auto& l : ablation_levels(c)) {
    need.push_back(lay.data(l, "finetune"));
    need.push_back(lay.data(l, "test"));
    for (std::uint64_t seed : c.seeds) need.push_back(lay.pretrained(l, seed));
  }
  require_artifacts(need);
  std::vector<EvalReport> reports;
  const MethodSpec seq{"sequential", c.sampler.nfe};
  for (const auto& l : ablation_levels(c)) {
    LevelContext ctx(c, l);
    for (bool gt : modes) {
      for (std::uint64_t seed : c.seeds) {
        if (!std::filesystem::exists(lay.pairs(l, seed, gt))) {
          write_pairs(c, l, seed, gt);
          progress(std::string("pairs ") + pair_mode(gt) + " " + l.name() + " seed " + std::to_string(seed));
        }
      }
      for (double tau : c.ablation.grid) {
        std::vector<SeedScore> scores;
        for (std::uint64_t seed : c.seeds) {
          finetune_one(c, l, seed, tau, gt);
          scores.push_back(score_predictions(run_method(c, ctx, seed, seq, tau, gt), ctx.test(), c.task_spec()));
          ctx.forget_sequential();
        }
        EvalReport r = aggregate(detail::level_label(c, l), ablation_method(tau, gt), seq.nfe, c.seeds, scores);
        r.extra = level_extra(c, l);
        r.extra["tau_renoise"] = tau;
        r.extra["pairs"] = pair_mode(gt);
        progress("ablate " + l.name() + " " + r.method + " log_mse_db " + std::to_string(r.metrics.at("log_mse_db").mean));
        reports.push_back(std::move(r));
      }
    }
  }
  write_reports(c, "ablation", reports);
  detail::write_config_echo(c, "ablate-renoise");
  return reports;
}

struct TheoryOptions {
  std::uint64_t seed = 0;
  std::size_t samples = 100000;
  std::optional<double> rho;
  std::size_t discrete_random = 0;
};

namespace detail {

inline double random_support_value(Rng& rng) { return std::round(rng.normal() * 64.0) / 16.0; }

// Joint with integer-count probabilities on a random support.
inline DiscreteJoint random_joint(Rng& rng) {
  const std::size_t n0 = 2 + rng.below(7), n1 = 2 + rng.below(7);
  std::vector<double> x0(n0), x1(n1);
  for (auto& v : x0) v = random_support_value(rng);
  for (auto& v : x1) v = random_support_value(rng);
  MatrixD counts(static_cast<Eigen::Index>(n0), static_cast<Eigen::Index>(n1));
  for (Eigen::Index i = 0; i < counts.rows(); ++i) {
    for (Eigen::Index j = 0; j < counts.cols(); ++j) counts(i, j) = static_cast<double>(rng.below(5));
  }
  counts(0, 0) += 1.0;
  return DiscreteJoint::make(std::move(x0), std::move(x1), counts / counts.sum());
}

// Product of two marginals with dyadic weights, so the table sums to 1 exactly.
inline DiscreteJoint random_independent_joint(Rng& rng) {
  auto marginal = [&](std::size_t n) {
    VectorD w(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = 1.0 + static_cast<double>(rng.below(8));
    return VectorD(w / w.sum());
  };
  const std::size_t n0 = 2 + rng.below(7), n1 = 2 + rng.below(7);
  std::vector<double> x0(n0), x1(n1);
  for (auto& v : x0) v = random_support_value(rng);
  for (auto& v : x1) v = random_support_value(rng);
  const VectorD a = marginal(n0), b = marginal(n1);
  MatrixD p = a * b.transpose();
  p /= p.sum();
  return DiscreteJoint::make(std::move(x0), std::move(x1), std::move(p));
}

inline double pushforward_w2sq(const DiscreteJoint& j) { return std::pow(w2_1d_weighted(one_step_pushforward(j), j.x0_marginal()), 2); }

}  // namespace detail

// The standard suite plus optional extra cases: closed forms and sampled
// errors at a given rho, and random discrete joints for the bound and its
// tightness under independence.
inline std::vector<VerificationRecord> theory_records(const TheoryOptions& o) {
  std::vector<VerificationRecord> out = run_theory_suite(o.seed, o.samples);
  if (o.rho) {
    const double rho = *o.rho;
    const auto chain = GaussianChain::unit_ar1(rho);
    const auto cf = prop1_gaussian_report(chain);
    std::ostringstream tag;
    tag << "ar1_rho" << rho;
    out.push_back({tag.str() + "_squared_gap", cf.gap, cf.lotv_gap, std::nullopt,
                   std::abs(cf.gap - rho * rho) < 1e-12 && std::abs(cf.gap - cf.lotv_gap) < 1e-12});
    out.push_back({tag.str() + "_w2_gap", cf.w2_gaussian_coupling - cf.w2_bayes_coupling, std::nullopt, std::nullopt,
                   std::abs(cf.w2_gaussian_coupling - cf.w2_bayes_coupling - std::abs(rho)) < 1e-12});
    Rng rng(o.seed, "theory-rho");
    const auto emp = prop1_empirical_check(chain, o.samples, rng);
    auto close = [](double a, double b) { return std::abs(a - b) <= 0.02 * std::abs(b) + 0.005; };
    out.push_back({tag.str() + "_w2_gaussian_empirical", cf.w2_gaussian_coupling, emp.w2_gaussian_coupling, std::nullopt,
                   close(emp.w2_gaussian_coupling, cf.w2_gaussian_coupling)});
    out.push_back({tag.str() + "_w2_bayes_empirical", cf.w2_bayes_coupling, emp.w2_bayes_coupling, cf.bayes_bound,
                   close(emp.w2_bayes_coupling, cf.w2_bayes_coupling)});
  }
  if (o.discrete_random > 0) {
    Rng rng(o.seed, "theory-discrete");
    std::size_t bound_ok = 0, tight_ok = 0;
    double worst_bound = -std::numeric_limits<double>::infinity(), worst_tight = 0.0;
    for (std::size_t k = 0; k < o.discrete_random; ++k) {
      const auto j = detail::random_joint(rng);
      const double slack = detail::pushforward_w2sq(j) - j.expected_conditional_variance();
      worst_bound = std::max(worst_bound, slack);
      if (slack <= 1e-12) ++bound_ok;
      const auto ind = detail::random_independent_joint(rng);
      const double err = std::abs(detail::pushforward_w2sq(ind) - ind.x0_variance());
      worst_tight = std::max(worst_tight, err);
      if (err <= 1e-12) ++tight_ok;
    }
    const auto n = static_cast<double>(o.discrete_random);
    out.push_back({"discrete_random_variance_bound", n, static_cast<double>(bound_ok), worst_bound, bound_ok == o.discrete_random});
    out.push_back({"discrete_random_independent_tight", n, static_cast<double>(tight_ok), worst_tight, tight_ok == o.discrete_random});
  }
  return out;
}

inline bool all_pass(const std::vector<VerificationRecord>& records) {
  return std::all_of(records.begin(), records.end(), [](const VerificationRecord& r) { return r.pass; });
}

inline std::string theory_jsonl(const std::vector<VerificationRecord>& records, const TheoryOptions& o) {
  std::string out;
  for (const auto& r : records) {
    nlohmann::json j = to_json(r);
    j["seed"] = o.seed;
    j["samples"] = o.samples;
    out += j.dump() + '\n';
  }
  return out;
}

}  // namespace seqflow
