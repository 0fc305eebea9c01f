#pragma once

// The coarse (CGT), medium (MGT) and fine (FGT) granularity tuners.
//
// All three share one calibration step: a learnable m x c token attends over
// the branch's features and is written back through two affine maps with a
// skip connection,
//
//   S  = softmax(F * T^T / sqrt(c))
//   F' = F + (S * (T * W1 + b1) + F) * W2 + b2
//
// and differ in how F is prepared: cluster-wise instance normalization (CGT),
// cross-attention onto fixed category embeddings (MGT), or self-attention
// queried by the Sobel response of the map (FGT).

#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "mgfc/cluster.hpp"
#include "mgfc/feature_map.hpp"
#include "mgfc/tensor.hpp"

namespace mgfc {

template <typename S>
struct TunerParams {
  Tensor<S> token;  // m x c
  Tensor<S> w1;     // c x c
  Tensor<S> b1;     // 1 x c
  Tensor<S> w2;     // c x c
  Tensor<S> b2;     // 1 x c

  Index token_length() const { return token.rows(); }
  Index channels() const { return token.cols(); }

  static TunerParams zeros(Index m, Index c) {
    return {Tensor<S>::zeros(m, c, true), Tensor<S>::zeros(c, c, true), Tensor<S>::zeros(1, c, true),
            Tensor<S>::zeros(c, c, true), Tensor<S>::zeros(1, c, true)};
  }
};

template <typename S>
struct Calibrated {
  FeatureMap<S> features;
  Tensor<S> similarity;  // HW x m, rows sum to one
};

template <typename S>
Calibrated<S> token_calibrate(const FeatureMap<S>& f, const TunerParams<S>& p) {
  const Index c = f.channels();
  if (p.channels() != c)
    throw ShapeError("token_calibrate: token width " + std::to_string(p.channels()) + " differs from " +
                     std::to_string(c) + " feature channels");
  if (p.w1.rows() != c || p.w1.cols() != c || p.w2.rows() != c || p.w2.cols() != c || p.b1.cols() != c ||
      p.b2.cols() != c)
    throw ShapeError("token_calibrate: MLP weights are not " + dims_string(c, c));
  const S inv_sqrt_c = S(1) / std::sqrt(static_cast<S>(c));
  Tensor<S> sim = softmax_rows(scale(matmul(f.values, transpose(p.token)), inv_sqrt_c));
  const Tensor<S> projected = add(matmul(p.token, p.w1), p.b1);
  const Tensor<S> mixed = add(matmul(sim, projected), f.values);
  Tensor<S> out = add(add(f.values, matmul(mixed, p.w2)), p.b2);
  return {FeatureMap<S>(std::move(out), f.height, f.width), std::move(sim)};
}

// Scaled dot-product attention without learned projections. With several
// heads the channels are split evenly and each head is scaled by the square
// root of its own width.
template <typename S>
Tensor<S> plain_attention(const Tensor<S>& query, const Tensor<S>& key, const Tensor<S>& value, int heads = 1) {
  if (query.cols() != key.cols())
    throw ShapeError("attention: query width " + std::to_string(query.cols()) + " differs from key width " +
                     std::to_string(key.cols()));
  if (key.rows() != value.rows())
    throw ShapeError("attention: " + std::to_string(key.rows()) + " keys but " + std::to_string(value.rows()) +
                     " values");
  if (heads < 1 || query.cols() % heads != 0 || value.cols() % heads != 0)
    throw ParameterError("attention: " + std::to_string(heads) + " heads do not divide the channel width");
  if (heads == 1) {
    const S inv = S(1) / std::sqrt(static_cast<S>(key.cols()));
    return matmul(softmax_rows(scale(matmul(query, transpose(key)), inv)), value);
  }
  const Index dq = query.cols() / heads, dv = value.cols() / heads;
  const S inv = S(1) / std::sqrt(static_cast<S>(dq));
  std::vector<Tensor<S>> outs;
  for (int h = 0; h < heads; ++h) {
    const Tensor<S> q = slice_cols(query, h * dq, dq);
    const Tensor<S> k = slice_cols(key, h * dq, dq);
    const Tensor<S> v = slice_cols(value, h * dv, dv);
    outs.push_back(matmul(softmax_rows(scale(matmul(q, transpose(k)), inv)), v));
  }
  return concat(std::span<const Tensor<S>>(outs), 1);
}

// ---------------------------------------------------------------------------
// Coarse-grained tuner

template <typename S>
FeatureMap<S> cgt_forward(const FeatureMap<S>& f, const TunerParams<S>& p, const ClusterConfig& cfg,
                          ClusterAssignment* used = nullptr, const ClusterAssignment* preset = nullptr) {
  ClusterAssignment assignment = preset ? *preset : cluster_tokens(f.value(), cfg);
  FeatureMap<S> normalized = cluster_instance_norm(f, assignment);
  if (used) *used = std::move(assignment);
  return token_calibrate(normalized, p).features;
}

// ---------------------------------------------------------------------------
// Medium-grained tuner

inline std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Frozen category embeddings standing in for a pretrained text encoder: row j
// is a unit-norm Gaussian vector drawn from a generator keyed by the category
// name, so it follows the name rather than its position in the list.
template <typename S>
struct TextEmbeddings {
  std::vector<std::string> categories;
  Tensor<S> embeddings;  // n x c, never trained
  std::uint64_t seed = 0;
};

template <typename S>
TextEmbeddings<S> text_embed(const std::vector<std::string>& categories, Index channels, std::uint64_t seed) {
  if (categories.empty()) throw ParameterError("text_embed: no categories");
  if (channels < 1) throw ParameterError("text_embed: channel count must be positive");
  std::set<std::string> seen;
  for (const auto& name : categories)
    if (!seen.insert(name).second) throw ParameterError("text_embed: duplicate category '" + name + "'");

  Matrix<double> e(static_cast<Index>(categories.size()), channels);
  for (std::size_t j = 0; j < categories.size(); ++j) {
    std::mt19937_64 rng(fnv1a64(categories[j]) ^ seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Index k = 0; k < channels; ++k) e(static_cast<Index>(j), k) = normal(rng);
    e.row(static_cast<Index>(j)).normalize();
  }
  return {categories, Tensor<S>(e.cast<S>(), false), seed};
}

template <typename S>
FeatureMap<S> text_cross_attention(const FeatureMap<S>& f, const TextEmbeddings<S>& text, int heads = 1) {
  if (text.embeddings.cols() != f.channels())
    throw ShapeError("text_cross_attention: text width " + std::to_string(text.embeddings.cols()) +
                     " differs from " + std::to_string(f.channels()) + " feature channels");
  return FeatureMap<S>(plain_attention(f.values, text.embeddings, text.embeddings, heads), f.height, f.width);
}

template <typename S>
FeatureMap<S> mgt_forward(const FeatureMap<S>& f, const TextEmbeddings<S>& text, const TunerParams<S>& p,
                          int heads = 1) {
  return token_calibrate(text_cross_attention(f, text, heads), p).features;
}

// ---------------------------------------------------------------------------
// Fine-grained tuner

inline constexpr std::array<double, 9> kSobelX = {-1, 0, 1, -2, 0, 2, -1, 0, 1};
inline constexpr std::array<double, 9> kSobelY = {-1, -2, -1, 0, 0, 0, 1, 2, 1};
inline constexpr double kSobelFloor = 1e-12;
inline constexpr Index kDefaultAttentionCap = 4096;

// Per-channel Sobel gradient magnitude, sqrt(gx^2 + gy^2 + 1e-12), with
// replicate padding.
template <typename S>
FeatureMap<S> sobel(const FeatureMap<S>& f) {
  std::array<S, 9> kx{}, ky{};
  for (int i = 0; i < 9; ++i) {
    kx[i] = static_cast<S>(kSobelX[i]);
    ky[i] = static_cast<S>(kSobelY[i]);
  }
  const Tensor<S> gx = conv3x3(f.values, f.height, f.width, kx);
  const Tensor<S> gy = conv3x3(f.values, f.height, f.width, ky);
  Tensor<S> mag = sqrt(add_scalar(add(mul(gx, gx), mul(gy, gy)), static_cast<S>(kSobelFloor)));
  return FeatureMap<S>(std::move(mag), f.height, f.width);
}

template <typename S>
FeatureMap<S> high_freq_self_attention(const FeatureMap<S>& f, int heads = 1, Index cap = kDefaultAttentionCap) {
  if (f.tokens() > cap)
    throw ResourceError("high_freq_self_attention: " + std::to_string(f.tokens()) + " tokens exceed the cap of " +
                        std::to_string(cap));
  return FeatureMap<S>(plain_attention(sobel(f).values, f.values, f.values, heads), f.height, f.width);
}

template <typename S>
FeatureMap<S> fgt_forward(const FeatureMap<S>& f, const TunerParams<S>& p, int heads = 1,
                          Index cap = kDefaultAttentionCap) {
  return token_calibrate(high_freq_self_attention(f, heads, cap), p).features;
}

}  // namespace mgfc
