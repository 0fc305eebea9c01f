#pragma once

// Full model: frozen encoder layers, each followed by the enabled tuner
// branches and their fusion, the query fusion module over the layer tokens,
// and the segmentation head.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mgfc/backbone.hpp"
#include "mgfc/cluster.hpp"
#include "mgfc/fusion.hpp"
#include "mgfc/gradcheck.hpp"
#include "mgfc/seghead.hpp"
#include "mgfc/tuners.hpp"

namespace mgfc {

struct TunerSet {
  bool cgt = true;
  bool mgt = true;
  bool fgt = true;

  int count() const { return int(cgt) + int(mgt) + int(fgt); }
  bool any() const { return count() > 0; }
  bool operator==(const TunerSet&) const = default;

  std::string to_string() const {
    std::string s;
    auto add = [&](bool on, const char* name) {
      if (!on) return;
      if (!s.empty()) s += ',';
      s += name;
    };
    add(cgt, "cgt");
    add(mgt, "mgt");
    add(fgt, "fgt");
    return s.empty() ? "none" : s;
  }
};

inline std::vector<std::string> default_categories(int classes) {
  static const std::vector<std::string> names = {"background", "circle", "square", "triangle"};
  std::vector<std::string> out;
  for (int c = 0; c < classes; ++c)
    out.push_back(c < static_cast<int>(names.size()) ? names[static_cast<std::size_t>(c)] : "class" + std::to_string(c));
  return out;
}

struct ModelConfig {
  BackboneConfig backbone;
  Index tokens = 16;
  ClusterConfig cluster;
  TunerSet tuners;
  int heads = 1;
  Index attention_cap = kDefaultAttentionCap;
  int classes = 4;
  std::uint64_t seed = 0;       // trainable initialization
  std::uint64_t text_seed = 0;  // category embeddings

  Index channels() const { return backbone.channels; }
};

// Records the cluster assignments of one forward pass, or replays them so that
// the labels stay fixed while parameters are perturbed.
struct ClusterCache {
  std::vector<ClusterAssignment> layers;
  bool replay = false;
};

template <typename S>
struct LayerTuners {
  std::optional<TunerParams<S>> cgt, mgt, fgt;
  std::optional<LayerFusionParams<S>> fusion;
};

template <typename S>
struct ForwardResult {
  FeatureMap<S> features;   // output of the last layer
  Tensor<S> queries;        // m x c_q
  std::vector<FeatureMap<S>> layer_outputs;
};

template <typename S>
class Model {
 public:
  explicit Model(ModelConfig cfg)
      : cfg_(std::move(cfg)),
        encoder_(make_frozen_encoder<S>(cfg_.backbone)),
        text_(text_embed<S>(default_categories(cfg_.classes), cfg_.channels(), cfg_.text_seed)) {
    if (cfg_.classes < 2) throw ConfigError("model needs at least two classes");
    if (cfg_.tokens < 1) throw ConfigError("tokens.m must be positive");
    init_trainable();
  }

  const ModelConfig& config() const { return cfg_; }
  const FrozenEncoder<S>& encoder() const { return encoder_; }
  FrozenEncoder<S>& mutable_encoder() { return encoder_; }
  const TextEmbeddings<S>& text() const { return text_; }
  std::vector<LayerTuners<S>>& layers() { return layers_; }
  const std::vector<LayerTuners<S>>& layers() const { return layers_; }
  std::optional<QueryFusionParams<S>>& qfm() { return qfm_; }
  HeadParams<S>& head() { return head_; }
  const HeadParams<S>& head() const { return head_; }

  std::vector<NamedTensor<S>> trainable_parameters() const {
    std::vector<NamedTensor<S>> out;
    auto tuner = [&](const std::string& prefix, const std::optional<TunerParams<S>>& t) {
      if (!t) return;
      out.push_back({prefix + ".token", t->token});
      out.push_back({prefix + ".w1", t->w1});
      out.push_back({prefix + ".b1", t->b1});
      out.push_back({prefix + ".w2", t->w2});
      out.push_back({prefix + ".b2", t->b2});
    };
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const std::string p = "layer" + std::to_string(i);
      tuner(p + ".cgt", layers_[i].cgt);
      tuner(p + ".mgt", layers_[i].mgt);
      tuner(p + ".fgt", layers_[i].fgt);
      if (layers_[i].fusion) {
        out.push_back({p + ".fuse.weight", layers_[i].fusion->weight});
        out.push_back({p + ".fuse.bias", layers_[i].fusion->bias});
      }
    }
    if (qfm_) {
      out.push_back({"qfm.w_q6", qfm_->w_q6});
      out.push_back({"qfm.mlp.w1", qfm_->mlp_w1});
      out.push_back({"qfm.mlp.b1", qfm_->mlp_b1});
      out.push_back({"qfm.mlp.w2", qfm_->mlp_w2});
      out.push_back({"qfm.mlp.b2", qfm_->mlp_b2});
      out.push_back({"qfm.w_q", qfm_->w_q});
      out.push_back({"qfm.b_q", qfm_->b_q});
    }
    if (baseline_queries_.defined()) out.push_back({"head.queries", baseline_queries_});
    out.push_back({"head.w_cls", head_.w_cls});
    out.push_back({"head.b_cls", head_.b_cls});
    return out;
  }

  std::vector<NamedTensor<S>> frozen_parameters() const { return encoder_.named_tensors(); }

  void zero_grad() {
    for (auto& p : trainable_parameters()) p.tensor.zero_grad();
  }

  // Tokens of layer i that feed the query fusion module; disabled branches
  // contribute zeros.
  Tensor<S> layer_token(std::size_t layer, int branch) const {
    const auto& l = layers_[layer];
    const auto& slot = branch == 0 ? l.cgt : branch == 1 ? l.mgt : l.fgt;
    if (slot) return slot->token;
    return Tensor<S>::zeros(cfg_.tokens, cfg_.channels());
  }

  Tensor<S> queries() const {
    if (!qfm_) return baseline_queries_;
    std::vector<Tensor<S>> per_layer;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const Tensor<S> fused = fuse_queries(layer_token(i, 0), layer_token(i, 1), layer_token(i, 2), *qfm_);
      per_layer.push_back(token_to_query(fused, *qfm_));
    }
    return aggregate_queries(std::span<const Tensor<S>>(per_layer), *qfm_);
  }

  ForwardResult<S> forward(const Matrix<S>& image, ClusterCache* cache = nullptr) const {
    ForwardResult<S> out;
    FeatureMap<S> x = patch_embed(image, encoder_);
    if (cache && !cache->replay) cache->layers.clear();
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      try {
        x = forward_layer(x, i, cache);
      } catch (const ShapeError& e) {
        throw ShapeError("layer " + std::to_string(i) + ": " + e.what());
      }
      out.layer_outputs.push_back(x);
    }
    out.features = x;
    out.queries = queries();
    return out;
  }

  Tensor<S> logits(const ForwardResult<S>& fwd) const { return predict_pixel_logits(fwd.queries, fwd.features, head_); }

  Tensor<S> logits(const Matrix<S>& image, ClusterCache* cache = nullptr) const { return logits(forward(image, cache)); }

 private:
  FeatureMap<S> forward_layer(const FeatureMap<S>& input, std::size_t i, ClusterCache* cache) const {
    const FeatureMap<S> f = encoder_layer(input, encoder_.layers[i]);
    const auto& l = layers_[i];
    std::vector<FeatureMap<S>> branches;
    if (l.cgt) {
      ClusterConfig cc = cfg_.cluster;
      if (cache && cache->replay) {
        branches.push_back(cgt_forward(f, *l.cgt, cc, nullptr, &cache->layers.at(i)));
      } else {
        ClusterAssignment used;
        branches.push_back(cgt_forward(f, *l.cgt, cc, &used));
        if (cache) cache->layers.push_back(std::move(used));
      }
    } else if (cache && !cache->replay) {
      cache->layers.emplace_back();
    }
    if (l.mgt) branches.push_back(mgt_forward(f, text_, *l.mgt, cfg_.heads));
    if (l.fgt) branches.push_back(fgt_forward(f, *l.fgt, cfg_.heads, cfg_.attention_cap));
    if (branches.empty()) return f;
    return fuse_layer_features(std::span<const FeatureMap<S>>(branches), *l.fusion);
  }

  void init_trainable() {
    std::mt19937_64 rng(cfg_.seed ^ 0x7f4a7c159e3779b9ULL);
    const Index c = cfg_.channels(), m = cfg_.tokens;
    const double inv_c = 1.0 / std::sqrt(static_cast<double>(c));
    auto param = [](const Matrix<double>& v) { return Tensor<S>(v.cast<S>(), true); };
    auto zeros = [](Index r, Index k) { return Tensor<S>::zeros(r, k, true); };
    auto tuner = [&]() {
      return TunerParams<S>{param(detail::gaussian(rng, m, c, 1.0)), param(detail::gaussian(rng, c, c, inv_c)),
                            zeros(1, c), param(detail::gaussian(rng, c, c, 0.1 * inv_c)), zeros(1, c)};
    };
    const int branches = cfg_.tuners.count();
    for (int i = 0; i < cfg_.backbone.layers; ++i) {
      LayerTuners<S> l;
      if (cfg_.tuners.cgt) l.cgt = tuner();
      if (cfg_.tuners.mgt) l.mgt = tuner();
      if (cfg_.tuners.fgt) l.fgt = tuner();
      if (branches > 0) {
        Matrix<double> w = detail::gaussian(rng, branches * c, c, 0.1 * inv_c);
        for (int b = 0; b < branches; ++b) w.middleRows(b * c, c) += Matrix<double>::Identity(c, c) / branches;
        l.fusion = LayerFusionParams<S>{param(w), zeros(1, c)};
      }
      layers_.push_back(std::move(l));
    }
    if (branches > 0) {
      Matrix<double> wq = detail::gaussian(rng, 3 * c, c, 0.1 * inv_c);
      for (int b = 0; b < 3; ++b) wq.middleRows(b * c, c) += Matrix<double>::Identity(c, c) / 3.0;
      qfm_ = QueryFusionParams<S>{param(detail::gaussian(rng, 2 * c, c, 1.0 / std::sqrt(2.0 * c))),
                                  param(detail::gaussian(rng, c, c, std::sqrt(2.0) * inv_c)),
                                  zeros(1, c),
                                  param(detail::gaussian(rng, c, c, inv_c)),
                                  zeros(1, c),
                                  param(wq),
                                  zeros(1, c)};
    } else {
      baseline_queries_ = param(detail::gaussian(rng, m, c, 1.0));
    }
    head_ = HeadParams<S>{param(detail::gaussian(rng, c, cfg_.classes, inv_c)), zeros(1, cfg_.classes)};
  }

  ModelConfig cfg_;
  FrozenEncoder<S> encoder_;
  TextEmbeddings<S> text_;
  std::vector<LayerTuners<S>> layers_;
  std::optional<QueryFusionParams<S>> qfm_;
  Tensor<S> baseline_queries_;
  HeadParams<S> head_;
};

}  // namespace mgfc
