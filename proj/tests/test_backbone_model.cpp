#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>
#include <random>

#include "mgfc/model.hpp"
#include "mgfc/optim.hpp"
#include "mgfc/state.hpp"
#include "oracles.hpp"

using namespace mgfc;
using T = Tensor<double>;
using M = Matrix<double>;
using FM = FeatureMap<double>;

namespace {

BackboneConfig tiny_backbone(Index image = 16, int layers = 2, Index c = 8) {
  BackboneConfig b;
  b.layers = layers;
  b.channels = c;
  b.patch = 4;
  b.image_height = image;
  b.image_width = image;
  return b;
}

ModelConfig tiny_model(TunerSet tuners = {}, int layers = 2) {
  ModelConfig m;
  m.backbone = tiny_backbone(16, layers);
  m.tokens = 4;
  m.tuners = tuners;
  m.cluster.min_pts = 2;
  return m;
}

M random_image(std::mt19937_64& rng, Index h, Index w) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  M m(h, 3 * w);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

NamedTensor<double>* find(std::vector<NamedTensor<double>>& ps, const std::string& name) {
  for (auto& p : ps)
    if (p.name == name) return &p;
  return nullptr;
}

}  // namespace

TEST_CASE("patch embedding of a zero image is the bias") {
  const auto enc = make_frozen_encoder<double>(tiny_backbone());
  const FM f = patch_embed(M(M::Zero(16, 48)), enc);
  for (Index i = 0; i < f.tokens(); ++i) CHECK(f.value().row(i) == enc.patch_bias.value().row(0));
}

TEST_CASE("patch grid arithmetic") {
  BackboneConfig b = tiny_backbone(64, 1, 8);
  const auto enc = make_frozen_encoder<double>(b);
  const FM f = patch_embed(M(M::Zero(64, 192)), enc);
  CHECK(f.tokens() == 256);
  CHECK(f.height == 16);
  CHECK(f.width == 16);
  CHECK_THROWS_AS(patch_embed(M(M::Zero(60, 192)), enc), ShapeError);
}

TEST_CASE("patch embedding is local") {
  std::mt19937_64 rng(1);
  const auto enc = make_frozen_encoder<double>(tiny_backbone());
  M a = random_image(rng, 16, 16), b = a;
  b(5, 3 * 9 + 1) += 0.5;  // pixel (5, 9) sits in patch (1, 2)
  const FM fa = patch_embed(a, enc), fb = patch_embed(b, enc);
  for (Index i = 0; i < 16; ++i) {
    if (i == 1 * 4 + 2) CHECK(fa.value().row(i) != fb.value().row(i));
    else CHECK(fa.value().row(i) == fb.value().row(i));
  }
}

TEST_CASE("patch extraction matches a pixel loop") {
  std::mt19937_64 rng(2);
  const BackboneConfig b = tiny_backbone(8, 1, 4);
  const M img = random_image(rng, 8, 8);
  const M p = extract_patches(img, b);
  for (Index gy = 0; gy < 2; ++gy)
    for (Index gx = 0; gx < 2; ++gx)
      for (Index dy = 0; dy < 4; ++dy)
        for (Index dx = 0; dx < 4; ++dx)
          for (Index ch = 0; ch < 3; ++ch)
            CHECK(p(gy * 2 + gx, (dy * 4 + dx) * 3 + ch) == img(gy * 4 + dy, (gx * 4 + dx) * 3 + ch));
}

TEST_CASE("encoder layer is deterministic and has a residual path") {
  std::mt19937_64 rng(3);
  auto enc = make_frozen_encoder<double>(tiny_backbone());
  const FM f(T(oracle::to_matrix(oracle::random_grid(rng, 16, 8))), 4, 4);
  CHECK(encoder_layer(f, enc.layers[0]).value() == encoder_layer(f, enc.layers[0]).value());
  auto l = enc.layers[0];
  l.wo = T(M::Zero(8, 8));
  l.mlp_w2 = T(M::Zero(16, 8));
  l.mlp_b2 = T(M::Zero(1, 8));
  CHECK(encoder_layer(f, l).value() == f.value());
}

TEST_CASE("encoder layer output stays bounded") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    BackboneConfig b = tiny_backbone();
    b.seed = seed;
    const auto enc = make_frozen_encoder<double>(b);
    const FM f(T(oracle::to_matrix(oracle::random_grid(rng, 16, 8))), 4, 4);
    const FM out = encoder_layer(f, enc.layers[0]);
    CHECK(out.value().allFinite());
    CHECK(out.value().norm() <= 10.0 * f.value().norm());
  }
}

TEST_CASE("frozen encoder weights are constant and seed-dependent") {
  const auto a = make_frozen_encoder<double>(tiny_backbone());
  const auto b = make_frozen_encoder<float>(tiny_backbone());
  CHECK(frozen_hash(a) == frozen_hash(b));
  for (const auto& t : a.named_tensors()) {
    CHECK_FALSE(t.tensor.requires_grad());
    CHECK(t.name.rfind("backbone.", 0) == 0);
  }
  BackboneConfig other = tiny_backbone();
  other.seed = 1;
  CHECK(frozen_hash(make_frozen_encoder<double>(other)) != frozen_hash(a));
  BackboneConfig bad = tiny_backbone();
  bad.image_height = 18;
  CHECK_THROWS_AS(make_frozen_encoder<double>(bad), ConfigError);
}

TEST_CASE("one-layer model with trivial tuners reduces to instance norm") {
  ModelConfig cfg = tiny_model({true, false, false}, 1);
  cfg.cluster.method = ClusterMethod::single;
  Model<double> model(cfg);
  auto& l = model.layers()[0];
  l.cgt = TunerParams<double>::zeros(4, 8);
  l.fusion->weight.mutable_value() = M::Identity(8, 8);
  l.fusion->bias.mutable_value().setZero();
  std::mt19937_64 rng(4);
  const M img = random_image(rng, 16, 16);
  const auto fwd = model.forward(img);
  const FM f1 = encoder_layer(patch_embed(img, model.encoder()), model.encoder().layers[0]);
  CHECK(oracle::max_abs_diff(fwd.features.value(), oracle::instance_norm(oracle::from(f1.values))) < 1e-12);
}

TEST_CASE("disabling a branch equals zeroing its fusion block") {
  for (auto drop : {0, 1, 2}) {
    const TunerSet kept{drop != 0, drop != 1, drop != 2};
    Model<double> full(tiny_model());
    Model<double> reduced(tiny_model(kept));
    auto fp = full.trainable_parameters();
    auto rp = reduced.trainable_parameters();
    const char* branch = drop == 0 ? "cgt" : drop == 1 ? "mgt" : "fgt";
    for (std::size_t i = 0; i < full.layers().size(); ++i) {
      auto& fuse = full.layers()[i].fusion->weight.mutable_value();
      fuse.middleRows(drop * 8, 8).setZero();
      auto* token = find(fp, "layer" + std::to_string(i) + "." + branch + ".token");
      token->tensor.mutable_value().setZero();
    }
    for (auto& p : rp) {
      auto* src = find(fp, p.name);
      REQUIRE(src != nullptr);
      if (p.name.find("fuse.weight") != std::string::npos) {
        M w(16, 8);
        Index row = 0;
        for (int b = 0; b < 3; ++b)
          if (b != drop) w.middleRows(8 * row++, 8) = src->tensor.value().middleRows(8 * b, 8);
        p.tensor.mutable_value() = w;
      } else {
        p.tensor.mutable_value() = src->tensor.value();
      }
    }
    std::mt19937_64 rng(5);
    const M img = random_image(rng, 16, 16);
    const auto a = full.logits(img).value();
    const auto b = reduced.logits(img).value();
    CHECK_MESSAGE(a == b, branch);
  }
}

TEST_CASE("every tuner subset builds a distinct runnable model") {
  std::set<std::vector<std::string>> layouts;
  std::mt19937_64 rng(6);
  const M img = random_image(rng, 16, 16);
  for (int mask = 0; mask < 8; ++mask) {
    const TunerSet t{(mask & 1) != 0, (mask & 2) != 0, (mask & 4) != 0};
    Model<double> model(tiny_model(t));
    const auto logits = model.logits(img);
    CHECK(logits.rows() == 16);
    CHECK(logits.cols() == 4);
    CHECK(logits.value().allFinite());
    std::vector<std::string> names;
    for (const auto& p : model.trainable_parameters()) names.push_back(p.name);
    layouts.insert(names);
  }
  CHECK(layouts.size() == 8);
}

TEST_CASE("trainable parameter names") {
  Model<double> model(tiny_model());
  std::set<std::string> names;
  for (const auto& p : model.trainable_parameters()) {
    CHECK(p.tensor.requires_grad());
    CHECK(p.name.rfind("backbone.", 0) != 0);
    names.insert(p.name);
  }
  for (const char* n : {"layer0.cgt.token", "layer1.fgt.w2", "layer1.fuse.weight", "qfm.w_q6", "qfm.mlp.w1", "qfm.w_q",
                        "head.w_cls", "head.b_cls"})
    CHECK_MESSAGE(names.count(n) == 1, n);
  CHECK(names.count("head.queries") == 0);
  Model<double> baseline(tiny_model({false, false, false}));
  std::set<std::string> bn;
  for (const auto& p : baseline.trainable_parameters()) bn.insert(p.name);
  CHECK(bn == std::set<std::string>{"head.queries", "head.w_cls", "head.b_cls"});
}

TEST_CASE("end-to-end gradient with respect to a token entry") {
  Model<double> model(tiny_model());
  std::mt19937_64 rng(7);
  const M img = random_image(rng, 16, 16);
  std::vector<int> labels(16);
  for (std::size_t i = 0; i < 16; ++i) labels[i] = static_cast<int>(i % 4);
  ClusterCache cache;
  model.forward(img, &cache);
  cache.replay = true;
  auto params = model.trainable_parameters();
  std::vector<NamedTensor<double>> token{*find(params, "layer0.mgt.token"), *find(params, "layer1.cgt.token")};
  const auto r = finite_diff_check<double>(
      [&] { return cross_entropy(model.logits(img, &cache), std::span<const int>(labels)); }, token);
  CHECK(r.passed);
  CHECK(r.max_rel_error() < 1e-3);
}

TEST_CASE("optimizer steps leave the frozen hash alone") {
  Model<double> model(tiny_model());
  const auto before = frozen_hash(model);
  std::mt19937_64 rng(8);
  const M img = random_image(rng, 16, 16);
  const std::vector<int> labels(16, 1);
  auto params = model.trainable_parameters();
  OptimizerState<double> state;
  state.config.lr = 1e-2;
  for (int i = 0; i < 5; ++i) {
    model.zero_grad();
    backward(cross_entropy(model.logits(img), std::span<const int>(labels)));
    adamw_step(params, state);
  }
  CHECK(frozen_hash(model) == before);
}

TEST_CASE("checkpoint restores every trainable tensor and refuses another backbone") {
  Model<double> a(tiny_model());
  for (auto& p : a.trainable_parameters()) p.tensor.mutable_value().array() += 0.25;
  const Checkpoint c = model_checkpoint(a);
  Model<double> b(tiny_model());
  load_checkpoint(b, c);
  const auto pa = a.trainable_parameters(), pb = b.trainable_parameters();
  for (std::size_t i = 0; i < pa.size(); ++i)
    CHECK(pa[i].tensor.value().cast<float>() == pb[i].tensor.value().cast<float>());

  ModelConfig other = tiny_model();
  other.backbone.seed = 99;
  Model<double> c2(other);
  CHECK_THROWS_AS(load_checkpoint(c2, c), IntegrityError);

  Model<double> reduced(tiny_model({true, true, false}));
  CHECK_THROWS_AS(load_checkpoint(reduced, c), ConfigError);
}

TEST_CASE("model errors carry the layer index") {
  ModelConfig cfg = tiny_model();
  cfg.attention_cap = 8;
  Model<double> model(cfg);
  std::mt19937_64 rng(9);
  CHECK_THROWS_AS(model.forward(random_image(rng, 16, 16)), ResourceError);
  CHECK_THROWS_AS(model.forward(M(M::Zero(16, 40))), ShapeError);
}
