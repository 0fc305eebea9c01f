#pragma once

// Per-layer fusion of the tuner branches and the query fusion module.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "mgfc/feature_map.hpp"
#include "mgfc/tensor.hpp"

namespace mgfc {

template <typename S>
struct LayerFusionParams {
  Tensor<S> weight;  // (branches * c) x d_fuse
  Tensor<S> bias;    // 1 x d_fuse
};

template <typename S>
struct QueryFusionParams {
  Tensor<S> w_q6;    // 2c x c: projects the coarse/medium concat onto the key width
  Tensor<S> mlp_w1;  // c x c
  Tensor<S> mlp_b1;  // 1 x c
  Tensor<S> mlp_w2;  // c x c_q
  Tensor<S> mlp_b2;  // 1 x c_q
  Tensor<S> w_q;     // 3c_q x c_q
  Tensor<S> b_q;     // 1 x c_q
};

// Linear(Concat(branches...)) along the channel axis. Accepts any non-empty
// subset of branches so that ablated models share the same code path.
template <typename S>
FeatureMap<S> fuse_layer_features(std::span<const FeatureMap<S>> branches, const LayerFusionParams<S>& p) {
  if (branches.empty()) throw ParameterError("fuse_layer_features: no branches");
  std::vector<Tensor<S>> parts;
  for (const auto& b : branches) {
    check_same_dims("fuse_layer_features", branches[0], b);
    parts.push_back(b.values);
  }
  const Index width = branches[0].channels() * static_cast<Index>(branches.size());
  if (p.weight.rows() != width)
    throw ShapeError("fuse_layer_features: weight has " + std::to_string(p.weight.rows()) + " rows, concat has " +
                     std::to_string(width) + " channels");
  const Tensor<S> joined = parts.size() == 1 ? parts[0] : concat(std::span<const Tensor<S>>(parts), 1);
  return FeatureMap<S>(add(matmul(joined, p.weight), p.bias), branches[0].height, branches[0].width);
}

template <typename S>
FeatureMap<S> fuse_layer_features(const FeatureMap<S>& coarse, const FeatureMap<S>& medium, const FeatureMap<S>& fine,
                                  const LayerFusionParams<S>& p) {
  const FeatureMap<S> all[] = {coarse, medium, fine};
  return fuse_layer_features(std::span<const FeatureMap<S>>(all), p);
}

// T_fuse = T_C + softmax((concat(T_C, T_M) * W_q6) * T_F^T / sqrt(c)) * T_F
template <typename S>
Tensor<S> fuse_queries(const Tensor<S>& coarse, const Tensor<S>& medium, const Tensor<S>& fine,
                       const QueryFusionParams<S>& p) {
  if (coarse.rows() != medium.rows() || coarse.rows() != fine.rows() || coarse.cols() != medium.cols() ||
      coarse.cols() != fine.cols())
    throw ShapeError("fuse_queries: tokens differ (" + dims_string(coarse.rows(), coarse.cols()) + ", " +
                     dims_string(medium.rows(), medium.cols()) + ", " + dims_string(fine.rows(), fine.cols()) + ")");
  const Index c = coarse.cols();
  if (p.w_q6.rows() != 2 * c || p.w_q6.cols() != c)
    throw ShapeError("fuse_queries: W_q6 must be " + dims_string(2 * c, c));
  const Tensor<S> query = matmul(concat({coarse, medium}, 1), p.w_q6);
  const S inv = S(1) / std::sqrt(static_cast<S>(c));
  const Tensor<S> attended = matmul(softmax_rows(scale(matmul(query, transpose(fine)), inv)), fine);
  return add(coarse, attended);
}

template <typename S>
Tensor<S> token_to_query(const Tensor<S>& fused, const QueryFusionParams<S>& p) {
  const Tensor<S> hidden = relu(add(matmul(fused, p.mlp_w1), p.mlp_b1));
  return add(matmul(hidden, p.mlp_w2), p.mlp_b2);
}

// Q = Concat(max_i Q_i, mean_i Q_i, Q_N) * W_Q + b_Q
template <typename S>
Tensor<S> aggregate_queries(std::span<const Tensor<S>> per_layer, const QueryFusionParams<S>& p) {
  if (per_layer.empty()) throw ParameterError("aggregate_queries: no layer queries");
  const Tensor<S> q_max = stack_max(per_layer);
  const Tensor<S> q_avg = stack_mean(per_layer);
  const Tensor<S> joined = concat({q_max, q_avg, per_layer.back()}, 1);
  if (p.w_q.rows() != joined.cols())
    throw ShapeError("aggregate_queries: W_Q has " + std::to_string(p.w_q.rows()) + " rows, expected " +
                     std::to_string(joined.cols()));
  return add(matmul(joined, p.w_q), p.b_q);
}

}  // namespace mgfc
