// seqflow: simulate, train, evaluate and verify sequential flow matching.
//
// Exit codes: 0 success, 1 invalid input or config, 2 runtime failure,
// 3 failed verification.

#include <cstdint>
#include <exception>
#include <functional>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "seqflow/core/error.hpp"
#include "seqflow/pipeline/artifacts.hpp"
#include "seqflow/pipeline/commands.hpp"
#include "seqflow/pipeline/config.hpp"

namespace {

using namespace seqflow;

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitCheckFailed = 3;

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> task;
  std::optional<std::size_t> nfe;
  std::optional<double> tau_renoise;
  std::optional<std::string> out;
  std::optional<std::string> methods;
  bool quiet = false;
  // verify-theory
  std::optional<double> rho;
  std::size_t discrete_random = 0;
  std::size_t samples = 100000;
};

RunConfig resolve_config(const Flags& f) {
  RunConfig c;
  if (!f.config.empty()) {
    c = load_config(f.config);
    if (f.task && task_kind_from_string(*f.task) != c.task) {
      throw ValidationError("--task " + *f.task + " conflicts with config field 'task' (" + to_string(c.task) + ")");
    }
  } else {
    c = default_config(f.task ? task_kind_from_string(*f.task) : TaskKind::lorenz_estimate);
  }
  if (f.seed) c.seeds = {*f.seed};
  if (f.nfe) c.sampler.nfe = *f.nfe;
  if (f.tau_renoise) c.sampler.tau_renoise = *f.tau_renoise;
  if (f.out) c.out = *f.out;
  if (f.methods) c.eval.methods = split_list(*f.methods);
  validate(c);
  return c;
}

int verify_theory(const Flags& f) {
  TheoryOptions o;
  o.seed = f.seed.value_or(0);
  o.samples = f.samples;
  o.rho = f.rho;
  o.discrete_random = f.discrete_random;
  if (o.rho && !(std::abs(*o.rho) <= 1.0)) throw ValidationError("--rho must lie in [-1, 1]");
  if (o.samples < 2) throw ValidationError("--samples must be >= 2");
  const auto records = theory_records(o);
  for (const auto& r : records) {
    std::cout << (r.pass ? "PASS " : "FAIL ") << r.name << " closed_form=" << r.closed_form;
    if (r.empirical) std::cout << " empirical=" << *r.empirical;
    if (r.bound) std::cout << " bound=" << *r.bound;
    std::cout << '\n';
  }
  if (f.out) write_bytes(std::filesystem::path(*f.out) / "reports" / "theory.jsonl", theory_jsonl(records, o));
  const bool ok = all_pass(records);
  std::cout << (ok ? "all theory checks passed" : "theory checks FAILED") << '\n';
  return ok ? 0 : kExitCheckFailed;
}

int run(const std::string& command, const Flags& f) {
  if (command == "verify-theory") return verify_theory(f);
  const RunConfig c = resolve_config(f);
  const Progress progress(f.quiet ? nullptr : &std::cerr);
  if (command == "simulate") {
    cmd_simulate(c, progress);
  } else if (command == "pretrain") {
    cmd_pretrain(c, progress);
  } else if (command == "build-pairs") {
    cmd_build_pairs(c, progress);
  } else if (command == "finetune") {
    cmd_finetune(c, progress);
  } else if (command == "infer") {
    cmd_infer(c, progress);
  } else if (command == "eval") {
    cmd_eval(c, progress);
    std::cout << (Layout{c.out}.reports() / "eval.csv").string() << '\n';
    return 0;
  } else if (command == "ablate-renoise") {
    cmd_ablate_renoise(c, progress);
    std::cout << (Layout{c.out}.reports() / "ablation.csv").string() << '\n';
    return 0;
  }
  detail::write_config_echo(c, command);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequential flow matching: simulators, training, evaluation and theory checks"};
  app.require_subcommand(1);
  app.fallthrough();
  Flags f;
  app.add_option("--config", f.config, "JSON run config; unspecified fields take task defaults")->check(CLI::ExistingFile);
  app.add_option("--seed", f.seed, "Use this single master seed instead of the configured list");
  app.add_option("--task", f.task, "lorenz_estimate | burgers_forecast | toy");
  app.add_option("--nfe", f.nfe, "Sampler steps for flow methods given without @nfe, and for the ablation");
  app.add_option("--tau-renoise", f.tau_renoise, "Re-noise level; default 0.4 at -10 dB, else 0.3");
  app.add_option("--out", f.out, "Output directory");
  app.add_option("--methods", f.methods, "Comma-separated methods, e.g. pretrained@1,sequential@1,EKF");
  app.add_flag("--quiet", f.quiet, "No progress output on stderr");

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"simulate", "Write pretrain, finetune and test trajectories"},
      {"pretrain", "Train the Gaussian-source flow and the autoregressive baseline"},
      {"build-pairs", "Roll out the pretrained flow to build finetuning pairs"},
      {"finetune", "Finetune the sequential flow from the pairs"},
      {"infer", "Write predictions of the configured methods"},
      {"eval", "Score all methods and the NFE sweep; write CSV and JSONL reports"},
      {"ablate-renoise", "Finetune and score over the re-noise grid"},
      {"verify-theory", "Check the coupling theory against closed forms"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    if (name == "verify-theory") {
      sub->add_option("--rho", f.rho, "Also check the unit AR(1) chain at this correlation");
      sub->add_option("--discrete-random", f.discrete_random, "Also check this many random discrete joints");
      sub->add_option("--samples", f.samples, "Samples for the empirical checks");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return run(command, f);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const MissingArtifactError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}
