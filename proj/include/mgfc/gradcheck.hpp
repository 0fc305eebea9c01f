#pragma once

// Central-difference verification of reverse-mode gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mgfc/tensor.hpp"

namespace mgfc {

template <typename S>
struct NamedTensor {
  std::string name;
  Tensor<S> tensor;
};

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0.0;
  bool passed = true;

  double max_rel_error() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.max_rel_error);
    return m;
  }
  double max_abs_error() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.max_abs_error);
    return m;
  }
};

// Entries whose gradients are both below this magnitude are compared in
// absolute terms (scaled by 1/floor), so that round-off in near-zero
// gradients does not masquerade as a relative failure.
inline constexpr double kGradCheckRelFloor = 1e-4;

// `f` must rebuild its graph from the given leaves on every call and return a
// scalar. Every input must be a leaf with requires_grad set. Gradients on the
// inputs are reset before and after the check.
template <typename S>
GradCheckReport finite_diff_check(const std::function<Tensor<S>()>& f, std::vector<NamedTensor<S>>& inputs,
                                  double h = 1e-5, double tol = 1e-3) {
  if (!(h > 0.0)) throw ParameterError("finite_diff_check: step must be positive");
  if constexpr (sizeof(S) == 8) {
    if (h < 1e-6 || h > 1e-3) throw ParameterError("finite_diff_check: step outside [1e-6, 1e-3]");
  }
  for (auto& in : inputs) {
    if (!in.tensor.requires_grad()) throw ContractError("finite_diff_check: input '" + in.name + "' does not require grad");
    in.tensor.zero_grad();
  }

  const Tensor<S> loss = f();
  const S base = loss.item();
  if (const S again = f().item(); !(again == base)) {
    throw ContractError("finite_diff_check: function is not deterministic (" + std::to_string(base) + " vs " +
                        std::to_string(again) + ")");
  }
  backward(loss);

  GradCheckReport report;
  report.tolerance = tol;
  for (auto& in : inputs) {
    const Matrix<S> analytic = in.tensor.grad();
    GradCheckEntry entry{in.name};
    auto& value = in.tensor.mutable_value();
    for (Index i = 0; i < value.size(); ++i) {
      S* slot = value.data() + i;
      const S saved = *slot;
      *slot = saved + static_cast<S>(h);
      const double up = static_cast<double>(f().item());
      *slot = saved - static_cast<S>(h);
      const double down = static_cast<double>(f().item());
      *slot = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = static_cast<double>(analytic.data()[i]);
      const double abs_err = std::abs(a - numeric);
      const double denom = std::max({std::abs(a), std::abs(numeric), kGradCheckRelFloor});
      entry.max_abs_error = std::max(entry.max_abs_error, abs_err);
      entry.max_rel_error = std::max(entry.max_rel_error, abs_err / denom);
    }
    if (!(entry.max_rel_error < tol)) report.passed = false;
    report.entries.push_back(std::move(entry));
  }
  for (auto& in : inputs) in.tensor.zero_grad();
  return report;
}

}  // namespace mgfc
