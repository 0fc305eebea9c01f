// mgfc command-line driver.

#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mgfc/commands.hpp"

namespace {

using namespace mgfc;

// Adds `--<key> value` for every RunConfig key plus `--config <file>`.
struct ConfigFlags {
  std::string file;
  std::map<std::string, std::string> overrides;

  void attach(CLI::App& app) {
    app.add_option("--config", file, "key=value config file");
    for (const auto& key : RunConfig::keys()) app.add_option("--" + key, overrides[key], "config key " + key);
  }

  // Starts from `base` (or the --config file, or defaults) and applies every
  // flag that was given.
  RunConfig resolve(const CLI::App& app, std::optional<RunConfig> base = std::nullopt) const {
    RunConfig cfg = !file.empty() ? RunConfig::from_file(file) : base ? *base : RunConfig();
    for (const auto& [key, value] : overrides)
      if (app.count("--" + key) > 0) cfg.set(key, value);
    return cfg;
  }

  bool any(const CLI::App& app) const {
    if (!file.empty()) return true;
    for (const auto& [key, v] : overrides)
      if (app.count("--" + key) > 0) return true;
    return false;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-granularity feature calibration on synthetic domain-shift scenes"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "render the source and target splits");
  ConfigFlags gen_flags;
  std::string gen_out;
  gen->add_option("--out", gen_out, "dataset root")->required();
  gen_flags.attach(*gen);

  auto* train = app.add_subcommand("train", "train tuners, fusion, and head on the source split");
  ConfigFlags train_flags;
  std::string train_data, train_out;
  bool drift = false;
  train->add_option("--data", train_data, "dataset root")->required();
  train->add_option("--out", train_out, "output directory for checkpoints and metrics")->required();
  train->add_flag("--inject-frozen-drift", drift, "test hook: perturb a frozen weight mid-run");
  train_flags.attach(*train);

  auto* eval = app.add_subcommand("eval", "per-class IoU and mIoU of a checkpoint");
  ConfigFlags eval_flags;
  EvalOptions eval_opt;
  std::string eval_ckpt, eval_data;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--data", eval_data, "dataset root")->required();
  eval->add_option("--domain", eval_opt.domain, "split to evaluate (source or target)");
  eval->add_option("--workers", eval_opt.workers, "evaluation threads")->check(CLI::PositiveNumber);
  eval->add_option("--eval-limit", eval_opt.limit, "evaluate only the first n samples")->check(CLI::NonNegativeNumber);
  eval_flags.attach(*eval);

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every backward rule (64-bit)");
  GradSuiteOptions grad_opt;
  grad->add_option("--seeds", grad_opt.seeds, "random instances per check")->check(CLI::PositiveNumber);
  grad->add_option("--base-seed", grad_opt.base_seed, "seed offset");
  grad->add_option("--step", grad_opt.step, "central-difference step");
  grad->add_option("--tolerance", grad_opt.tolerance, "max relative error");
  grad->add_option("--inject-fault", grad_opt.inject_fault, "test hook: corrupt the backward rule of this op");
  grad->add_option("--filter", grad_opt.filter, "run only checks whose name contains this");

  auto* inspect = app.add_subcommand("inspect", "list the contents of a checkpoint or tensor file");
  std::string inspect_path;
  inspect->add_option("checkpoint", inspect_path, "file to inspect")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  return run_guarded(
      [&]() -> int {
        if (*gen) return cmd_gendata(gen_flags.resolve(*gen), gen_out, std::cout);
        if (*train) {
          TrainHooks hooks;
          hooks.inject_frozen_drift = drift;
          return cmd_train(train_flags.resolve(*train), train_data, train_out, std::cout, hooks);
        }
        if (*eval) {
          eval_opt.checkpoint = eval_ckpt;
          eval_opt.data_root = eval_data;
          if (eval_flags.any(*eval)) {
            const std::filesystem::path beside = eval_opt.checkpoint.parent_path() / "config.txt";
            std::optional<RunConfig> base;
            if (std::filesystem::exists(beside)) base = RunConfig::from_file(beside);
            eval_opt.config = eval_flags.resolve(*eval, base);
          }
          return cmd_eval(eval_opt, std::cout);
        }
        if (*grad) return cmd_gradcheck(grad_opt, std::cout);
        return cmd_inspect(inspect_path, std::cout);
      },
      std::cerr);
}
