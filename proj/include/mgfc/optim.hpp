#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "mgfc/gradcheck.hpp"
#include "mgfc/tensor.hpp"

namespace mgfc {

struct AdamWConfig {
  double lr = 1e-4;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename S>
struct OptimizerState {
  AdamWConfig config;
  std::vector<Matrix<S>> first_moment;
  std::vector<Matrix<S>> second_moment;
  std::int64_t step = 0;
};

// Decoupled weight decay: the parameter is shrunk by lr * wd before the
// bias-corrected Adam update is subtracted.
template <typename S>
void adamw_step(std::vector<NamedTensor<S>>& params, OptimizerState<S>& state) {
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.push_back(Matrix<S>::Zero(p.tensor.rows(), p.tensor.cols()));
      state.second_moment.push_back(Matrix<S>::Zero(p.tensor.rows(), p.tensor.cols()));
    }
  }
  if (state.first_moment.size() != params.size()) throw ContractError("adamw_step: parameter list changed");
  for (const auto& p : params) {
    if (!p.tensor.requires_grad()) throw ContractError("adamw_step: parameter '" + p.name + "' has no grad");
  }

  ++state.step;
  const auto& cfg = state.config;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const S lr = static_cast<S>(cfg.lr);
  const S decay = static_cast<S>(1.0 - cfg.lr * cfg.weight_decay);
  const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
  const S eps = static_cast<S>(cfg.eps);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& tensor = params[i].tensor;
    const auto& g = tensor.grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (m.rows() != g.rows() || m.cols() != g.cols())
      throw ShapeError("adamw_step: moment dims differ for '" + params[i].name + "'");
    m = b1 * m + (S(1) - b1) * g;
    v = b2 * v + (S(1) - b2) * g.cwiseAbs2();
    auto& w = tensor.mutable_value();
    if (cfg.weight_decay != 0.0) w *= decay;
    const auto m_hat = m.array() / static_cast<S>(bc1);
    const auto v_hat = v.array() / static_cast<S>(bc2);
    w.array() -= lr * m_hat / (v_hat.sqrt() + eps);
  }
}

}  // namespace mgfc
