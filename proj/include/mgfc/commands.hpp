#pragma once

// Entry points behind the mgfc subcommands. Each returns a process exit code:
// 0 ok, 1 check failure, 2 config error, 3 data or integrity error.

#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>

#include "mgfc/config.hpp"
#include "mgfc/gradsuite.hpp"
#include "mgfc/train.hpp"

namespace mgfc {

enum ExitCode : int { kExitOk = 0, kExitCheckFailed = 1, kExitConfig = 2, kExitData = 3 };

// Runs `body`, reporting any exception on `err` and mapping it to an exit code.
int run_guarded(const std::function<int()>& body, std::ostream& err);

int cmd_gendata(const RunConfig& cfg, const std::filesystem::path& out_root, std::ostream& out);

int cmd_train(const RunConfig& cfg, const std::filesystem::path& data_root, const std::filesystem::path& out_dir,
              std::ostream& out, const TrainHooks& hooks = {});

struct EvalOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path data_root;
  std::string domain = "target";
  // Model config; read from config.txt beside the checkpoint when unset.
  std::optional<RunConfig> config;
  int workers = 1;
  int limit = 0;
};

int cmd_eval(const EvalOptions& opt, std::ostream& out);

int cmd_gradcheck(const GradSuiteOptions& opt, std::ostream& out);

int cmd_inspect(const std::filesystem::path& path, std::ostream& out);

}  // namespace mgfc
