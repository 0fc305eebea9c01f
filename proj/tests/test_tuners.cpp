#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "mgfc/tuners.hpp"
#include "oracles.hpp"

using namespace mgfc;
using T = Tensor<double>;
using M = Matrix<double>;
using FM = FeatureMap<double>;

namespace {

FM random_map(std::mt19937_64& rng, Index h, Index w, Index c) {
  return FM(T(oracle::to_matrix(oracle::random_grid(rng, static_cast<std::size_t>(h * w), static_cast<std::size_t>(c)))), h, w);
}

TunerParams<double> random_tuner(std::mt19937_64& rng, Index m, Index c) {
  auto g = [&](Index r, Index k) { return T(oracle::to_matrix(oracle::random_grid(rng, static_cast<std::size_t>(r), static_cast<std::size_t>(k))), true); };
  return {g(m, c), g(c, c), g(1, c), g(c, c), g(1, c)};
}

std::vector<std::string> default_names() { return {"background", "circle", "square", "triangle"}; }

FM constant_map(Index h, Index w, Index c, double v) { return FM(T(M::Constant(h * w, c, v)), h, w); }

}  // namespace

TEST_CASE("token_calibrate with zero MLPs is the identity") {
  std::mt19937_64 rng(1);
  const FM f = random_map(rng, 3, 2, 4);
  auto p = TunerParams<double>::zeros(3, 4);
  p.token = T(oracle::to_matrix(oracle::random_grid(rng, 3, 4)), true);
  CHECK(token_calibrate(f, p).features.value() == f.value());
}

TEST_CASE("token_calibrate with W2=0 adds b2 to every row") {
  std::mt19937_64 rng(2);
  const FM f = random_map(rng, 3, 2, 4);
  auto p = random_tuner(rng, 3, 4);
  p.w2 = T(M::Zero(4, 4), true);
  const auto out = token_calibrate(f, p).features.value();
  for (Index i = 0; i < 6; ++i) CHECK(out.row(i) == f.value().row(i) + p.b2.value().row(0));
}

TEST_CASE("token_calibrate matches the straight-line formula") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    const FM f = random_map(rng, 3, 2, 4);
    const auto p = random_tuner(rng, 3, 4);
    const auto ref = oracle::token_calibrate(oracle::from(f.values), oracle::from(p.token), oracle::from(p.w1),
                                             oracle::from(p.b1), oracle::from(p.w2), oracle::from(p.b2));
    const auto out = token_calibrate(f, p);
    CHECK(oracle::max_abs_diff(out.features.value(), ref) < 1e-9);
    for (Index i = 0; i < 6; ++i) CHECK(out.similarity.value().row(i).sum() == doctest::Approx(1.0));
  }
}

TEST_CASE("token_calibrate rejects mismatched token width") {
  std::mt19937_64 rng(3);
  const FM f = random_map(rng, 2, 2, 4);
  CHECK_THROWS_AS(token_calibrate(f, TunerParams<double>::zeros(3, 5)), ShapeError);
}

TEST_CASE("cgt with a single cluster and zero MLPs is whole-map IN") {
  std::mt19937_64 rng(4);
  const FM f = random_map(rng, 4, 4, 6);
  ClusterConfig cfg;
  cfg.method = ClusterMethod::single;
  const FM out = cgt_forward(f, TunerParams<double>::zeros(5, 6), cfg);
  CHECK(oracle::max_abs_diff(out.value(), oracle::instance_norm(oracle::from(f.values))) < 1e-12);
}

TEST_CASE("cgt on a constant map with zero MLPs is zero") {
  for (auto method : {ClusterMethod::single, ClusterMethod::kmeans, ClusterMethod::dbscan}) {
    ClusterConfig cfg;
    cfg.method = method;
    cfg.k = 2;
    const FM out = cgt_forward(constant_map(4, 4, 3, 2.5), TunerParams<double>::zeros(4, 3), cfg);
    CHECK(out.value().cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("cgt reports and replays its assignment") {
  std::mt19937_64 rng(5);
  const FM f = random_map(rng, 4, 4, 6);
  const auto p = random_tuner(rng, 4, 6);
  ClusterConfig cfg;
  cfg.min_pts = 2;
  ClusterAssignment used;
  const FM a = cgt_forward(f, p, cfg, &used);
  CHECK(used.labels.size() == 16);
  const FM b = cgt_forward(f, p, cfg, nullptr, &used);
  CHECK(a.value() == b.value());
}

TEST_CASE("text embeddings are deterministic, unit norm, and keyed by name") {
  const std::vector<std::string> names = {"background", "circle", "square", "triangle"};
  const auto a = text_embed<double>(names, 16, 7);
  const auto b = text_embed<double>(names, 16, 7);
  CHECK(a.embeddings.value() == b.embeddings.value());
  CHECK_FALSE(a.embeddings.requires_grad());
  for (Index j = 0; j < 4; ++j) CHECK(std::abs(a.embeddings.value().row(j).norm() - 1.0) < 1e-6);
  const std::vector<std::string> shuffled = {"square", "background", "triangle", "circle"};
  const auto c = text_embed<double>(shuffled, 16, 7);
  for (std::size_t j = 0; j < 4; ++j) {
    const auto it = std::find(names.begin(), names.end(), shuffled[j]);
    CHECK(c.embeddings.value().row(static_cast<Index>(j)) == a.embeddings.value().row(it - names.begin()));
  }
  CHECK(text_embed<double>(names, 16, 8).embeddings.value() != a.embeddings.value());
  CHECK_THROWS_AS(text_embed<double>({"a", "a"}, 4, 0), ParameterError);
}

TEST_CASE("text cross-attention trivial cases") {
  std::mt19937_64 rng(6);
  const auto one = text_embed<double>({"only"}, 5, 1);
  const FM out = text_cross_attention(random_map(rng, 2, 3, 5), one);
  for (Index i = 0; i < 6; ++i) CHECK(out.value().row(i) == one.embeddings.value().row(0));

  const auto four = text_embed<double>(default_names(), 5, 1);
  const FM zero = text_cross_attention(constant_map(2, 2, 5, 0.0), four);
  const Eigen::RowVectorXd mean = four.embeddings.value().colwise().mean();
  for (Index i = 0; i < 4; ++i) CHECK((zero.value().row(i) - mean).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("text cross-attention matches the straight-line formula") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    const FM f = random_map(rng, 3, 3, 6);
    const auto text = text_embed<double>(default_names(), 6, seed);
    const auto e = oracle::from(text.embeddings);
    CHECK(oracle::max_abs_diff(text_cross_attention(f, text).value(), oracle::attention(oracle::from(f.values), e, e)) < 1e-9);
  }
}

TEST_CASE("mgt trivial cases") {
  std::mt19937_64 rng(7);
  const FM f = random_map(rng, 2, 2, 4);
  const auto text = text_embed<double>(default_names(), 4, 0);
  const auto zero = TunerParams<double>::zeros(3, 4);
  CHECK(mgt_forward(f, text, zero).value() == text_cross_attention(f, text).value());
  const auto one = text_embed<double>({"x"}, 4, 0);
  const FM out = mgt_forward(f, one, zero);
  for (Index i = 0; i < 4; ++i) CHECK(out.value().row(i) == one.embeddings.value().row(0));
}

TEST_CASE("sobel on a constant map is the floor") {
  const FM out = sobel(constant_map(5, 6, 3, 0.7));
  CHECK(out.value().maxCoeff() <= 1e-5);
}

TEST_CASE("sobel on a vertical step edge") {
  const Index h = 4, w = 6;
  M v = M::Zero(h * w, 1);
  for (Index y = 0; y < h; ++y)
    for (Index x = w / 2; x < w; ++x) v(y * w + x, 0) = 1.0;
  const FM out = sobel(FM(T(v), h, w));
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      const double g = out.value()(y * w + x, 0);
      if (x == w / 2 - 1 || x == w / 2) CHECK(g == doctest::Approx(4.0));
      else CHECK(g < 1e-5);
    }
}

TEST_CASE("sobel matches direct convolution") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const FM f = random_map(rng, 5, 7, 3);
    CHECK(oracle::max_abs_diff(sobel(f).value(), oracle::sobel(oracle::from(f.values), 5, 7)) < 1e-6);
  }
}

TEST_CASE("high-frequency self-attention trivial cases") {
  const FM c = constant_map(3, 3, 4, 1.25);
  CHECK((high_freq_self_attention(c).value().array() - 1.25).abs().maxCoeff() < 1e-12);
  std::mt19937_64 rng(8);
  const FM single = random_map(rng, 1, 1, 4);
  CHECK(high_freq_self_attention(single).value() == single.value());
}

TEST_CASE("high-frequency self-attention matches the straight-line formula") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    const FM f = random_map(rng, 4, 3, 5);
    const auto g = oracle::from(f.values);
    CHECK(oracle::max_abs_diff(high_freq_self_attention(f).value(), oracle::attention(oracle::sobel(g, 4, 3), g, g)) < 1e-9);
  }
}

TEST_CASE("high-frequency self-attention refuses maps above the cap") {
  std::mt19937_64 rng(9);
  CHECK_THROWS_AS(high_freq_self_attention(random_map(rng, 4, 4, 2), 1, 15), ResourceError);
}

TEST_CASE("fgt trivial cases") {
  std::mt19937_64 rng(10);
  const FM f = random_map(rng, 3, 3, 4);
  const auto zero = TunerParams<double>::zeros(2, 4);
  CHECK(fgt_forward(f, zero).value() == high_freq_self_attention(f).value());
  const FM c = constant_map(3, 3, 4, -0.5);
  CHECK((fgt_forward(c, zero).value().array() + 0.5).abs().maxCoeff() < 1e-12);
}

TEST_CASE("branches keep the input dims") {
  std::mt19937_64 rng(11);
  const FM f = random_map(rng, 4, 5, 8);
  const auto p = random_tuner(rng, 3, 8);
  ClusterConfig cfg;
  const auto text = text_embed<double>(default_names(), 8, 0);
  for (const FM& out : {cgt_forward(f, p, cfg), mgt_forward(f, text, p), fgt_forward(f, p)}) {
    CHECK(out.height == 4);
    CHECK(out.width == 5);
    CHECK(out.channels() == 8);
  }
}

TEST_CASE("multi-head attention splits channels") {
  std::mt19937_64 rng(12);
  const FM f = random_map(rng, 3, 3, 6);
  const auto g = oracle::from(f.values);
  const FM out = high_freq_self_attention(f, 2);
  const auto s = oracle::sobel(g, 3, 3);
  auto cols = [](const oracle::Grid& a, std::size_t from, std::size_t n) {
    oracle::Grid o = oracle::zeros(a.size(), n);
    for (std::size_t i = 0; i < a.size(); ++i)
      for (std::size_t j = 0; j < n; ++j) o[i][j] = a[i][from + j];
    return o;
  };
  const auto ref = oracle::hconcat({oracle::attention(cols(s, 0, 3), cols(g, 0, 3), cols(g, 0, 3)),
                                    oracle::attention(cols(s, 3, 3), cols(g, 3, 3), cols(g, 3, 3))});
  CHECK(oracle::max_abs_diff(out.value(), ref) < 1e-9);
  CHECK_THROWS_AS(high_freq_self_attention(f, 4), ParameterError);
}
