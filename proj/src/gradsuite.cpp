#include "mgfc/gradsuite.hpp"

#include <functional>
#include <memory>
#include <random>

#include "mgfc/backbone.hpp"
#include "mgfc/cluster.hpp"
#include "mgfc/fusion.hpp"
#include "mgfc/gradcheck.hpp"
#include "mgfc/model.hpp"
#include "mgfc/seghead.hpp"
#include "mgfc/tuners.hpp"

namespace mgfc {

namespace {

using T = Tensor<double>;
using M = Matrix<double>;
using FM = FeatureMap<double>;

constexpr Index kC = 8, kM = 4, kH = 4, kW = 4, kHW = kH * kW;

struct Problem {
  std::function<T()> f;
  std::vector<NamedTensor<double>> inputs;
};

struct Case {
  std::string name;
  std::function<Problem(std::mt19937_64&)> build;
};

T leaf(std::mt19937_64& rng, Index r, Index c, double stddev = 1.0) { return T(detail::gaussian(rng, r, c, stddev), true); }

T positive_leaf(std::mt19937_64& rng, Index r, Index c) {
  std::uniform_real_distribution<double> u(0.5, 2.0);
  M v(r, c);
  for (Index i = 0; i < v.size(); ++i) v.data()[i] = u(rng);
  return T(v, true);
}

// Entries kept at least 0.1 away from zero so that kinks stay out of reach of
// the finite-difference step.
T off_zero_leaf(std::mt19937_64& rng, Index r, Index c) {
  M v = detail::gaussian(rng, r, c, 1.0);
  for (Index i = 0; i < v.size(); ++i) v.data()[i] += v.data()[i] >= 0 ? 0.1 : -0.1;
  return T(v, true);
}

// Fixed random weighting turns any output into a scalar whose gradient
// exercises every output entry differently.
std::function<T(const T&)> weigher(std::mt19937_64& rng, Index r, Index c) {
  const T w(detail::gaussian(rng, r, c, 1.0));
  return [w](const T& out) { return sum(mul(out, w)); };
}

TunerParams<double> tuner_leaves(std::mt19937_64& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(kC));
  return {leaf(rng, kM, kC), leaf(rng, kC, kC, s), leaf(rng, 1, kC, 0.1), leaf(rng, kC, kC, s), leaf(rng, 1, kC, 0.1)};
}

void add_tuner(std::vector<NamedTensor<double>>& in, const TunerParams<double>& p) {
  in.push_back({"token", p.token});
  in.push_back({"w1", p.w1});
  in.push_back({"b1", p.b1});
  in.push_back({"w2", p.w2});
  in.push_back({"b2", p.b2});
}

QueryFusionParams<double> qfm_leaves(std::mt19937_64& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(kC));
  return {leaf(rng, 2 * kC, kC, s), leaf(rng, kC, kC, s), leaf(rng, 1, kC, 0.1), leaf(rng, kC, kC, s),
          leaf(rng, 1, kC, 0.1),    leaf(rng, 3 * kC, kC, s), leaf(rng, 1, kC, 0.1)};
}

FM feature_leaf(std::mt19937_64& rng) { return FM(leaf(rng, kHW, kC), kH, kW); }

Problem unary(std::mt19937_64& rng, T x, std::function<T(const T&)> op) {
  const T probe = op(x);
  auto w = weigher(rng, probe.rows(), probe.cols());
  return {[=] { return w(op(x)); }, {{"x", x}}};
}

Problem binary(std::mt19937_64& rng, T a, T b, std::function<T(const T&, const T&)> op) {
  const T probe = op(a, b);
  auto w = weigher(rng, probe.rows(), probe.cols());
  return {[=] { return w(op(a, b)); }, {{"a", a}, {"b", b}}};
}

EncoderLayerParams<double> frozen_layer(std::uint64_t seed) {
  BackboneConfig cfg;
  cfg.layers = 1;
  cfg.channels = kC;
  cfg.patch = 4;
  cfg.image_height = 16;
  cfg.image_width = 16;
  cfg.seed = seed;
  return make_frozen_encoder<double>(cfg).layers.at(0);
}

std::vector<Case> cases() {
  std::vector<Case> out;
  auto check = [&](std::string name, std::function<Problem(std::mt19937_64&)> build) {
    out.push_back({std::move(name), std::move(build)});
  };

  // Tensor primitives.
  check("matmul", [](auto& r) { return binary(r, leaf(r, 3, 4), leaf(r, 4, 5), [](auto& a, auto& b) { return matmul(a, b); }); });
  check("transpose", [](auto& r) { return unary(r, leaf(r, 3, 4), [](auto& a) { return transpose(a); }); });
  check("reshape", [](auto& r) { return unary(r, leaf(r, 3, 4), [](auto& a) { return reshape(a, 2, 6); }); });
  check("add", [](auto& r) { return binary(r, leaf(r, 3, 4), leaf(r, 3, 4), [](auto& a, auto& b) { return add(a, b); }); });
  check("add[row]", [](auto& r) { return binary(r, leaf(r, 3, 4), leaf(r, 1, 4), [](auto& a, auto& b) { return add(a, b); }); });
  check("add[scalar]", [](auto& r) { return binary(r, leaf(r, 3, 4), leaf(r, 1, 1), [](auto& a, auto& b) { return add(a, b); }); });
  check("sub", [](auto& r) { return binary(r, leaf(r, 3, 4), leaf(r, 1, 4), [](auto& a, auto& b) { return sub(a, b); }); });
  check("mul", [](auto& r) { return binary(r, leaf(r, 3, 4), leaf(r, 3, 4), [](auto& a, auto& b) { return mul(a, b); }); });
  check("mul[row]", [](auto& r) { return binary(r, leaf(r, 3, 4), leaf(r, 1, 4), [](auto& a, auto& b) { return mul(a, b); }); });
  check("div", [](auto& r) { return binary(r, leaf(r, 3, 4), positive_leaf(r, 3, 4), [](auto& a, auto& b) { return div(a, b); }); });
  check("div[scalar]", [](auto& r) { return binary(r, leaf(r, 3, 4), positive_leaf(r, 1, 1), [](auto& a, auto& b) { return div(a, b); }); });
  check("scale", [](auto& r) { return unary(r, leaf(r, 3, 4), [](auto& a) { return scale(a, -1.7); }); });
  check("add_scalar", [](auto& r) { return unary(r, leaf(r, 3, 4), [](auto& a) { return add_scalar(a, 0.3); }); });
  check("sqrt", [](auto& r) { return unary(r, positive_leaf(r, 3, 4), [](auto& a) { return sqrt(a); }); });
  check("relu", [](auto& r) { return unary(r, off_zero_leaf(r, 3, 4), [](auto& a) { return relu(a); }); });
  check("sigmoid", [](auto& r) { return unary(r, leaf(r, 3, 4), [](auto& a) { return sigmoid(a); }); });
  check("log", [](auto& r) { return unary(r, positive_leaf(r, 3, 4), [](auto& a) { return log(a); }); });
  check("softmax_rows", [](auto& r) { return unary(r, leaf(r, 3, 5), [](auto& a) { return softmax_rows(a); }); });
  check("sum", [](auto& r) { return unary(r, leaf(r, 3, 4), [](auto& a) { return sum(a); }); });
  check("mean", [](auto& r) { return unary(r, leaf(r, 3, 4), [](auto& a) { return mean(a); }); });
  check("mean_rows", [](auto& r) { return unary(r, leaf(r, 3, 4), [](auto& a) { return mean_rows(a); }); });
  check("stack_max", [](auto& r) {
    return binary(r, leaf(r, 3, 4), leaf(r, 3, 4), [](auto& a, auto& b) { return stack_max(std::span<const T>(std::array{a, b})); });
  });
  check("stack_mean", [](auto& r) {
    return binary(r, leaf(r, 3, 4), leaf(r, 3, 4), [](auto& a, auto& b) { return stack_mean(std::span<const T>(std::array{a, b})); });
  });
  check("concat[rows]", [](auto& r) { return binary(r, leaf(r, 2, 4), leaf(r, 3, 4), [](auto& a, auto& b) { return concat({a, b}, 0); }); });
  check("concat[cols]", [](auto& r) { return binary(r, leaf(r, 3, 2), leaf(r, 3, 4), [](auto& a, auto& b) { return concat({a, b}, 1); }); });
  check("slice_cols", [](auto& r) { return unary(r, leaf(r, 3, 6), [](auto& a) { return slice_cols(a, 2, 3); }); });
  check("gather_rows", [](auto& r) { return unary(r, leaf(r, 4, 3), [](auto& a) { return gather_rows(a, {3, 0, 3, 1}); }); });
  check("conv3x3", [](auto& r) {
    std::normal_distribution<double> n;
    std::array<double, 9> k;
    for (auto& v : k) v = n(r);
    return unary(r, leaf(r, kHW, 3), [k](auto& a) { return conv3x3(a, kH, kW, k); });
  });
  check("standardize_columns", [](auto& r) { return unary(r, leaf(r, 6, 3), [](auto& a) { return standardize_columns(a); }); });
  check("cluster_instance_norm", [](auto& r) {
    ClusterAssignment a;
    a.labels = {0, 0, 0, 1, 1, 1, 1, kNoise, kNoise, 0, 1, 2, 2, 2, kNoise, 0};
    a.num_clusters = 3;
    a.method = ClusterMethod::dbscan;
    return unary(r, leaf(r, kHW, kC), [a](auto& x) { return cluster_instance_norm(FM(x, kH, kW), a).values; });
  });
  check("layer_norm", [](auto& r) {
    const T x = leaf(r, 5, kC), g = leaf(r, 1, kC), b = leaf(r, 1, kC);
    auto w = weigher(r, 5, kC);
    return Problem{[=] { return w(layer_norm(x, g, b)); }, {{"x", x}, {"gamma", g}, {"beta", b}}};
  });
  check("cross_entropy", [](auto& r) {
    const T logits = leaf(r, 6, 4);
    std::vector<int> labels = {0, 3, 1, 2, 2, 0};
    return Problem{[=] { return cross_entropy(logits, std::span<const int>(labels)); }, {{"logits", logits}}};
  });
  check("plain_attention[heads=2]", [](auto& r) {
    const T q = leaf(r, 5, kC), k = leaf(r, 6, kC), v = leaf(r, 6, kC);
    auto w = weigher(r, 5, kC);
    return Problem{[=] { return w(plain_attention(q, k, v, 2)); }, {{"q", q}, {"k", k}, {"v", v}}};
  });

  // Tuner components.
  check("token_calibrate", [](auto& r) {
    const FM f = feature_leaf(r);
    const auto p = tuner_leaves(r);
    auto w = weigher(r, kHW, kC);
    Problem pr{[=] { return w(token_calibrate(f, p).features.values); }, {{"features", f.values}}};
    add_tuner(pr.inputs, p);
    return pr;
  });
  check("cgt_forward", [](auto& r) {
    const FM f = feature_leaf(r);
    const auto p = tuner_leaves(r);
    ClusterConfig cc;
    cc.min_pts = 2;
    const ClusterAssignment fixed = cluster_tokens(f.value(), cc);
    auto w = weigher(r, kHW, kC);
    Problem pr{[=] { return w(cgt_forward(f, p, cc, nullptr, &fixed).values); }, {{"features", f.values}}};
    add_tuner(pr.inputs, p);
    return pr;
  });
  check("cgt_forward[kmeans]", [](auto& r) {
    const FM f = feature_leaf(r);
    const auto p = tuner_leaves(r);
    ClusterConfig cc;
    cc.method = ClusterMethod::kmeans;
    cc.k = 3;
    const ClusterAssignment fixed = cluster_tokens(f.value(), cc);
    auto w = weigher(r, kHW, kC);
    Problem pr{[=] { return w(cgt_forward(f, p, cc, nullptr, &fixed).values); }, {{"features", f.values}}};
    add_tuner(pr.inputs, p);
    return pr;
  });
  check("text_cross_attention", [](auto& r) {
    const auto text = text_embed<double>(default_categories(4), kC, r());
    return unary(r, leaf(r, kHW, kC), [text](auto& x) { return text_cross_attention(FM(x, kH, kW), text).values; });
  });
  check("mgt_forward", [](auto& r) {
    const FM f = feature_leaf(r);
    const auto p = tuner_leaves(r);
    const auto text = text_embed<double>(default_categories(4), kC, r());
    auto w = weigher(r, kHW, kC);
    Problem pr{[=] { return w(mgt_forward(f, text, p).values); }, {{"features", f.values}}};
    add_tuner(pr.inputs, p);
    return pr;
  });
  check("sobel", [](auto& r) { return unary(r, leaf(r, kHW, kC), [](auto& x) { return sobel(FM(x, kH, kW)).values; }); });
  check("high_freq_self_attention", [](auto& r) {
    return unary(r, leaf(r, kHW, kC), [](auto& x) { return high_freq_self_attention(FM(x, kH, kW)).values; });
  });
  check("high_freq_self_attention[heads=2]", [](auto& r) {
    return unary(r, leaf(r, kHW, kC), [](auto& x) { return high_freq_self_attention(FM(x, kH, kW), 2).values; });
  });
  check("fgt_forward", [](auto& r) {
    const FM f = feature_leaf(r);
    const auto p = tuner_leaves(r);
    auto w = weigher(r, kHW, kC);
    Problem pr{[=] { return w(fgt_forward(f, p).values); }, {{"features", f.values}}};
    add_tuner(pr.inputs, p);
    return pr;
  });

  // Fusion and the query path.
  check("fuse_layer_features", [](auto& r) {
    const FM a = feature_leaf(r), b = feature_leaf(r), c = feature_leaf(r);
    const LayerFusionParams<double> p{leaf(r, 3 * kC, kC, 0.3), leaf(r, 1, kC, 0.1)};
    auto w = weigher(r, kHW, kC);
    return Problem{[=] { return w(fuse_layer_features(a, b, c, p).values); },
                   {{"coarse", a.values}, {"medium", b.values}, {"fine", c.values}, {"weight", p.weight}, {"bias", p.bias}}};
  });
  check("fuse_queries", [](auto& r) {
    const T tc = leaf(r, kM, kC), tm = leaf(r, kM, kC), tf = leaf(r, kM, kC);
    const auto p = qfm_leaves(r);
    auto w = weigher(r, kM, kC);
    return Problem{[=] { return w(fuse_queries(tc, tm, tf, p)); },
                   {{"coarse", tc}, {"medium", tm}, {"fine", tf}, {"w_q6", p.w_q6}}};
  });
  check("token_to_query", [](auto& r) {
    const T t = leaf(r, kM, kC);
    const auto p = qfm_leaves(r);
    auto w = weigher(r, kM, kC);
    return Problem{[=] { return w(token_to_query(t, p)); },
                   {{"tokens", t}, {"mlp.w1", p.mlp_w1}, {"mlp.b1", p.mlp_b1}, {"mlp.w2", p.mlp_w2}, {"mlp.b2", p.mlp_b2}}};
  });
  check("aggregate_queries", [](auto& r) {
    const T q1 = leaf(r, kM, kC), q2 = leaf(r, kM, kC);
    const auto p = qfm_leaves(r);
    auto w = weigher(r, kM, kC);
    return Problem{[=] { return w(aggregate_queries(std::span<const T>(std::array{q1, q2}), p)); },
                   {{"q1", q1}, {"q2", q2}, {"w_q", p.w_q}, {"b_q", p.b_q}}};
  });
  check("predict_pixel_logits", [](auto& r) {
    const T q = leaf(r, kM, kC);
    const FM f = feature_leaf(r);
    const HeadParams<double> p{leaf(r, kC, 4, 0.3), leaf(r, 1, 4, 0.1)};
    auto w = weigher(r, kHW, 4);
    return Problem{[=] { return w(predict_pixel_logits(q, f, p)); },
                   {{"queries", q}, {"features", f.values}, {"w_cls", p.w_cls}, {"b_cls", p.b_cls}}};
  });
  check("encoder_layer", [](auto& r) {
    const auto layer = frozen_layer(r());
    return unary(r, leaf(r, kHW, kC), [layer](auto& x) { return encoder_layer(FM(x, kH, kW), layer).values; });
  });

  // The whole model, cluster labels recorded once and replayed.
  check("model", [](auto& r) {
    ModelConfig cfg;
    cfg.backbone.layers = 2;
    cfg.backbone.channels = kC;
    cfg.backbone.patch = 4;
    cfg.backbone.image_height = 16;
    cfg.backbone.image_width = 16;
    cfg.backbone.seed = r();
    cfg.tokens = kM;
    cfg.cluster.min_pts = 2;
    cfg.seed = r();
    cfg.text_seed = r();
    auto model = std::make_shared<Model<double>>(cfg);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    M image(16, 48);
    for (Index i = 0; i < image.size(); ++i) image.data()[i] = u(r);
    std::uniform_int_distribution<int> cls(0, 3);
    std::vector<int> labels(kHW);
    for (auto& l : labels) l = cls(r);
    auto cache = std::make_shared<ClusterCache>();
    model->forward(image, cache.get());
    cache->replay = true;
    return Problem{[=] { return cross_entropy(model->logits(image, cache.get()), std::span<const int>(labels)); },
                   model->trainable_parameters()};
  });
  return out;
}

struct FaultGuard {
  explicit FaultGuard(const std::string& op) {
    if (!op.empty()) inject_backward_fault(op);
  }
  ~FaultGuard() { clear_backward_fault(); }
};

}  // namespace

std::vector<std::string> grad_suite_names() {
  std::vector<std::string> names;
  for (const auto& c : cases()) names.push_back(c.name);
  return names;
}

GradSuiteReport run_grad_suite(const GradSuiteOptions& opt) {
  if (opt.seeds < 1) throw ConfigError("gradcheck: need at least one seed");
  FaultGuard guard(opt.inject_fault);
  GradSuiteReport report;
  for (const auto& c : cases()) {
    if (!opt.filter.empty() && c.name.find(opt.filter) == std::string::npos) continue;
    GradSuiteLine line{c.name};
    for (int s = 0; s < opt.seeds; ++s) {
      std::mt19937_64 rng(opt.base_seed * 1000003ULL + static_cast<std::uint64_t>(s) * 7919ULL + fnv1a64(c.name));
      Problem p = c.build(rng);
      const GradCheckReport r = finite_diff_check<double>(p.f, p.inputs, opt.step, opt.tolerance);
      line.max_rel_error = std::max(line.max_rel_error, r.max_rel_error());
      line.passed = line.passed && r.passed;
    }
    report.passed = report.passed && line.passed;
    report.lines.push_back(std::move(line));
  }
  return report;
}

}  // namespace mgfc
