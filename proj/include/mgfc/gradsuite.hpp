#pragma once

// The gradient-check suite over every differentiable operation, run in double
// precision on tiny shapes.

#include <cstdint>
#include <string>
#include <vector>

namespace mgfc {

struct GradSuiteOptions {
  int seeds = 5;
  std::uint64_t base_seed = 0;
  double step = 1e-5;
  double tolerance = 1e-3;
  // Op name whose backward rule is corrupted for the duration of the run.
  std::string inject_fault;
  // Run only checks whose name contains this substring.
  std::string filter;
};

struct GradSuiteLine {
  std::string name;
  double max_rel_error = 0.0;
  bool passed = true;
};

struct GradSuiteReport {
  std::vector<GradSuiteLine> lines;
  bool passed = true;
};

std::vector<std::string> grad_suite_names();
GradSuiteReport run_grad_suite(const GradSuiteOptions& opt);

}  // namespace mgfc
