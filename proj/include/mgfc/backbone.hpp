#pragma once

// Frozen transformer encoder standing in for a pretrained vision backbone.
// Every tensor here is a constant: gradients pass through the layers to the
// trainable tuners upstream, but never accumulate in the encoder itself.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mgfc/cluster.hpp"
#include "mgfc/feature_map.hpp"
#include "mgfc/gradcheck.hpp"
#include "mgfc/tensor.hpp"

namespace mgfc {

struct BackboneConfig {
  int layers = 4;
  Index channels = 64;
  Index patch = 4;
  Index image_height = 64;
  Index image_width = 64;
  Index mlp_ratio = 2;
  std::uint64_t seed = 0;

  Index grid_height() const { return image_height / patch; }
  Index grid_width() const { return image_width / patch; }

  void validate() const {
    if (layers < 1) throw ConfigError("backbone.layers must be at least 1");
    if (channels < 1 || patch < 1) throw ConfigError("backbone channels and patch size must be positive");
    if (image_height % patch != 0 || image_width % patch != 0)
      throw ConfigError("image " + dims_string(image_height, image_width) + " is not divisible by patch size " +
                        std::to_string(patch));
  }
};

template <typename S>
struct EncoderLayerParams {
  Tensor<S> ln1_gamma, ln1_beta;
  Tensor<S> wq, wk, wv, wo;
  Tensor<S> ln2_gamma, ln2_beta;
  Tensor<S> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

template <typename S>
struct FrozenEncoder {
  BackboneConfig config;
  Tensor<S> patch_weight;  // 3P^2 x c
  Tensor<S> patch_bias;    // 1 x c
  std::vector<EncoderLayerParams<S>> layers;

  // Stable ordering; the frozen hash is computed over this list.
  std::vector<NamedTensor<S>> named_tensors() const {
    std::vector<NamedTensor<S>> out{{"backbone.patch.weight", patch_weight}, {"backbone.patch.bias", patch_bias}};
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      const std::string p = "backbone.layer" + std::to_string(i) + ".";
      out.push_back({p + "ln1.gamma", l.ln1_gamma});
      out.push_back({p + "ln1.beta", l.ln1_beta});
      out.push_back({p + "attn.wq", l.wq});
      out.push_back({p + "attn.wk", l.wk});
      out.push_back({p + "attn.wv", l.wv});
      out.push_back({p + "attn.wo", l.wo});
      out.push_back({p + "ln2.gamma", l.ln2_gamma});
      out.push_back({p + "ln2.beta", l.ln2_beta});
      out.push_back({p + "mlp.w1", l.mlp_w1});
      out.push_back({p + "mlp.b1", l.mlp_b1});
      out.push_back({p + "mlp.w2", l.mlp_w2});
      out.push_back({p + "mlp.b2", l.mlp_b2});
    }
    return out;
  }
};

namespace detail {
inline Matrix<double> gaussian(std::mt19937_64& rng, Index rows, Index cols, double stddev) {
  std::normal_distribution<double> normal(0.0, stddev);
  Matrix<double> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}
}  // namespace detail

// Weights are drawn in double from a generator seeded by config.seed and then
// rounded to S, so the float32 bytes agree across precisions.
template <typename S>
FrozenEncoder<S> make_frozen_encoder(const BackboneConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed ^ 0x5bd1e995f00dULL);
  const Index c = cfg.channels, in = 3 * cfg.patch * cfg.patch, hidden = cfg.mlp_ratio * c;
  auto frozen = [](const Matrix<double>& m) { return Tensor<S>(m.cast<S>(), false); };
  FrozenEncoder<S> enc;
  enc.config = cfg;
  enc.patch_weight = frozen(detail::gaussian(rng, in, c, 1.0 / std::sqrt(static_cast<double>(in))));
  enc.patch_bias = frozen(detail::gaussian(rng, 1, c, 0.1));
  for (int i = 0; i < cfg.layers; ++i) {
    EncoderLayerParams<S> l;
    const double ws = 1.0 / std::sqrt(static_cast<double>(c));
    l.ln1_gamma = frozen(Matrix<double>::Ones(1, c) + detail::gaussian(rng, 1, c, 0.05));
    l.ln1_beta = frozen(detail::gaussian(rng, 1, c, 0.05));
    l.wq = frozen(detail::gaussian(rng, c, c, ws));
    l.wk = frozen(detail::gaussian(rng, c, c, ws));
    l.wv = frozen(detail::gaussian(rng, c, c, ws));
    l.wo = frozen(detail::gaussian(rng, c, c, 0.5 * ws));
    l.ln2_gamma = frozen(Matrix<double>::Ones(1, c) + detail::gaussian(rng, 1, c, 0.05));
    l.ln2_beta = frozen(detail::gaussian(rng, 1, c, 0.05));
    l.mlp_w1 = frozen(detail::gaussian(rng, c, hidden, ws));
    l.mlp_b1 = frozen(detail::gaussian(rng, 1, hidden, 0.05));
    l.mlp_w2 = frozen(detail::gaussian(rng, hidden, c, 0.5 / std::sqrt(static_cast<double>(hidden))));
    l.mlp_b2 = frozen(detail::gaussian(rng, 1, c, 0.05));
    enc.layers.push_back(std::move(l));
  }
  return enc;
}

// Rearranges an H_img x (W_img * 3) interleaved image into one row per P x P
// patch, flattened as (row, column, channel).
template <typename S>
Matrix<S> extract_patches(const Matrix<S>& image, const BackboneConfig& cfg) {
  if (image.rows() != cfg.image_height || image.cols() != cfg.image_width * 3)
    throw ShapeError("patch_embed: image is " + dims_string(image.rows(), image.cols() / 3) + "x3, expected " +
                     dims_string(cfg.image_height, cfg.image_width) + "x3");
  const Index p = cfg.patch, gh = cfg.grid_height(), gw = cfg.grid_width();
  Matrix<S> patches(gh * gw, 3 * p * p);
  for (Index gy = 0; gy < gh; ++gy)
    for (Index gx = 0; gx < gw; ++gx) {
      auto row = patches.row(gy * gw + gx);
      for (Index dy = 0; dy < p; ++dy) row.segment(dy * p * 3, p * 3) = image.row(gy * p + dy).segment(gx * p * 3, p * 3);
    }
  return patches;
}

template <typename S>
FeatureMap<S> patch_embed(const Matrix<S>& image, const FrozenEncoder<S>& enc) {
  const Tensor<S> patches(extract_patches(image, enc.config), false);
  return FeatureMap<S>(add(matmul(patches, enc.patch_weight), enc.patch_bias), enc.config.grid_height(),
                       enc.config.grid_width());
}

// Per-token layer normalization (over channels) with an affine map.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta) {
  return add(mul(transpose(standardize_columns(transpose(x))), gamma), beta);
}

// Pre-norm block: x + Attn(LN(x)), then + MLP(LN(.)).
template <typename S>
FeatureMap<S> encoder_layer(const FeatureMap<S>& f, const EncoderLayerParams<S>& l) {
  const Index c = l.wq.rows();
  if (f.channels() != c)
    throw ShapeError("encoder_layer: input has " + std::to_string(f.channels()) + " channels, layer expects " +
                     std::to_string(c));
  const Tensor<S> h = layer_norm(f.values, l.ln1_gamma, l.ln1_beta);
  const Tensor<S> q = matmul(h, l.wq), k = matmul(h, l.wk), v = matmul(h, l.wv);
  const S inv = S(1) / std::sqrt(static_cast<S>(c));
  const Tensor<S> attn = matmul(softmax_rows(scale(matmul(q, transpose(k)), inv)), v);
  const Tensor<S> x1 = add(f.values, matmul(attn, l.wo));
  const Tensor<S> h2 = layer_norm(x1, l.ln2_gamma, l.ln2_beta);
  const Tensor<S> mlp = add(matmul(relu(add(matmul(h2, l.mlp_w1), l.mlp_b1)), l.mlp_w2), l.mlp_b2);
  return FeatureMap<S>(add(x1, mlp), f.height, f.width);
}

}  // namespace mgfc
