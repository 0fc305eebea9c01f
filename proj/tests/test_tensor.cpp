#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "mgfc/gradcheck.hpp"
#include "mgfc/gradsuite.hpp"
#include "mgfc/optim.hpp"
#include "mgfc/tensor.hpp"
#include "oracles.hpp"

using namespace mgfc;
using T = Tensor<double>;
using M = Matrix<double>;

namespace {

M mat(std::initializer_list<std::initializer_list<double>> rows) {
  M m(static_cast<Index>(rows.size()), static_cast<Index>(rows.begin()->size()));
  Index i = 0;
  for (const auto& r : rows) {
    Index j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

M random(std::mt19937_64& rng, Index r, Index c) { return oracle::to_matrix(oracle::random_grid(rng, r, c)); }

}  // namespace

TEST_CASE("matmul hand cases") {
  const T eye(M::Identity(2, 2));
  const T b(mat({{1, 2}, {3, 4}}));
  CHECK(matmul(eye, b).value() == b.value());
  CHECK(matmul(T(mat({{1, 2}})), T(mat({{3}, {4}}))).value()(0, 0) == 11.0);
}

TEST_CASE("matmul matches the triple loop") {
  std::mt19937_64 rng(3);
  const auto a = oracle::random_grid(rng, 5, 7), b = oracle::random_grid(rng, 7, 3);
  const T out = matmul(T(oracle::to_matrix(a)), T(oracle::to_matrix(b)));
  CHECK(oracle::max_abs_diff(out.value(), oracle::matmul(a, b)) < 1e-6);
}

TEST_CASE("matmul rejects mismatched inner dims and names both") {
  try {
    matmul(T(M::Zero(2, 3)), T(M::Zero(4, 2)));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string what = e.what();
    CHECK(what.find("2x3") != std::string::npos);
    CHECK(what.find("4x2") != std::string::npos);
  }
}

TEST_CASE("softmax_rows examples") {
  const T u = softmax_rows(T(M::Zero(1, 4)));
  for (Index j = 0; j < 4; ++j) CHECK(u.value()(0, j) == doctest::Approx(0.25));
  const T one = softmax_rows(T(mat({{3.0}, {-2.0}, {7.0}})));
  CHECK(one.value() == M::Ones(3, 1));
  const T r = softmax_rows(T(mat({{0.0, std::log(2.0)}})));
  CHECK(std::abs(r.value()(0, 0) - 1.0 / 3.0) < 1e-7);
  CHECK(std::abs(r.value()(0, 1) - 2.0 / 3.0) < 1e-7);
}

TEST_CASE("softmax_rows rejects NaN and survives large logits") {
  M m = M::Zero(1, 3);
  m(0, 1) = std::nan("");
  CHECK_THROWS_AS(softmax_rows(T(m)), NumericError);
  const T big = softmax_rows(T(mat({{1000.0, 1000.0}})));
  CHECK(big.value()(0, 0) == doctest::Approx(0.5));
}

TEST_CASE("backward hand cases") {
  {
    T x(mat({{1.0, 2.0, 3.0}}), true);
    backward(sum(x));
    CHECK(x.grad() == M::Ones(1, 3));
  }
  {
    T x(mat({{1.0, 2.0}}), true);
    backward(sum(mul(x, x)));
    CHECK(x.grad()(0, 0) == 2.0);
    CHECK(x.grad()(0, 1) == 4.0);
  }
}

TEST_CASE("backward accumulates over shared subexpressions") {
  T x(mat({{1.5}}), true);
  const T y = mul(x, x);
  backward(add(y, y));  // 2 x^2
  CHECK(x.grad()(0, 0) == doctest::Approx(6.0));
}

TEST_CASE("backward requires a scalar loss that depends on a parameter") {
  T x(M::Ones(2, 2), true);
  CHECK_THROWS_AS(backward(x), ContractError);
  CHECK_THROWS_AS(backward(sum(T(M::Ones(2, 2)))), ContractError);
}

TEST_CASE("replaying a forward pass is bit-identical") {
  std::mt19937_64 rng(11);
  const T a(random(rng, 4, 6)), b(random(rng, 6, 5));
  auto f = [&] { return softmax_rows(scale(matmul(a, b), 0.3)); };
  CHECK(f().value() == f().value());
}

TEST_CASE("broadcast operands") {
  const T a(mat({{1, 2}, {3, 4}}));
  CHECK(add(a, T(mat({{10, 20}}))).value() == mat({{11, 22}, {13, 24}}));
  CHECK(mul(a, T(mat({{2}}))).value() == mat({{2, 4}, {6, 8}}));
  CHECK_THROWS_AS(add(a, T(M::Zero(3, 2))), ShapeError);
  CHECK_THROWS_AS(add(a, T(M::Zero(2, 1))), ShapeError);
}

TEST_CASE("sqrt and log domain errors") {
  CHECK_THROWS_AS(sqrt(T(mat({{-1.0}}))), NumericError);
  CHECK_THROWS_AS(log(T(mat({{0.0}}))), NumericError);
}

TEST_CASE("stack_max sends gradient to the first maximum on ties") {
  T a(mat({{1.0, 5.0}}), true), b(mat({{1.0, 2.0}}), true);
  const std::array<T, 2> parts{a, b};
  backward(sum(stack_max(std::span<const T>(parts))));
  CHECK(a.grad() == mat({{1.0, 1.0}}));
  CHECK(b.grad() == mat({{0.0, 0.0}}));
}

TEST_CASE("conv3x3 with an identity kernel is the identity") {
  std::mt19937_64 rng(1);
  const T x(random(rng, 12, 2));
  std::array<double, 9> k{};
  k[4] = 1.0;
  CHECK(conv3x3(x, 3, 4, k).value() == x.value());
}

TEST_CASE("finite differences on sum(matmul)") {
  std::mt19937_64 rng(5);
  T a(random(rng, 3, 3), true), b(random(rng, 3, 3), true);
  std::vector<NamedTensor<double>> in{{"a", a}, {"b", b}};
  const auto r = finite_diff_check<double>([&] { return sum(matmul(a, b)); }, in);
  CHECK(r.passed);
  CHECK(r.max_rel_error() < 1e-6);
}

TEST_CASE("sum of a row softmax has zero gradient") {
  std::mt19937_64 rng(6);
  T x(random(rng, 3, 4), true);
  backward(sum(softmax_rows(x)));
  CHECK(x.grad().cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("finite_diff_check validates its step and inputs") {
  T x(M::Ones(1, 1), true);
  std::vector<NamedTensor<double>> in{{"x", x}};
  auto f = [&] { return sum(x); };
  CHECK_THROWS_AS(finite_diff_check<double>(f, in, 1e-8), ParameterError);
  CHECK_THROWS_AS(finite_diff_check<double>(f, in, 1e-2), ParameterError);
  std::vector<NamedTensor<double>> frozen{{"y", T(M::Ones(1, 1))}};
  CHECK_THROWS_AS(finite_diff_check<double>(f, frozen), ContractError);
}

TEST_CASE("gradient checker flags a corrupted backward rule") {
  std::mt19937_64 rng(7);
  T a(random(rng, 3, 3), true), b(random(rng, 3, 3), true);
  std::vector<NamedTensor<double>> in{{"a", a}, {"b", b}};
  inject_backward_fault("matmul");
  const auto r = finite_diff_check<double>([&] { return sum(matmul(a, b)); }, in);
  clear_backward_fault();
  CHECK_FALSE(r.passed);
}

TEST_CASE("every primitive passes at the tighter tolerance") {
  GradSuiteOptions opt;
  opt.seeds = 5;
  opt.tolerance = 1e-4;
  const auto report = run_grad_suite(opt);
  const std::vector<std::string> primitives = {
      "matmul", "transpose", "reshape", "add", "add[row]", "add[scalar]", "sub", "mul", "mul[row]", "div", "div[scalar]",
      "scale", "add_scalar", "sqrt", "relu", "sigmoid", "log", "softmax_rows", "sum", "mean", "mean_rows", "stack_max",
      "stack_mean", "concat[rows]", "concat[cols]", "slice_cols", "gather_rows", "conv3x3", "cross_entropy"};
  for (const auto& name : primitives) {
    auto it = std::find_if(report.lines.begin(), report.lines.end(), [&](const auto& l) { return l.name == name; });
    REQUIRE_MESSAGE(it != report.lines.end(), name);
    CHECK_MESSAGE(it->max_rel_error < 1e-4, name);
  }
}

TEST_CASE("AdamW hand cases") {
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  cfg.lr = 0.1;
  {
    std::vector<NamedTensor<double>> p{{"w", T(mat({{1.0}}), true)}};
    OptimizerState<double> s{cfg};
    adamw_step(p, s);
    CHECK(p[0].tensor.value()(0, 0) == 1.0);
  }
  {
    std::vector<NamedTensor<double>> p{{"w", T(mat({{1.0}}), true)}};
    p[0].tensor.mutable_grad()(0, 0) = 1.0;
    OptimizerState<double> s{cfg};
    adamw_step(p, s);
    CHECK(p[0].tensor.value()(0, 0) == doctest::Approx(0.9).epsilon(1e-6));
  }
  {
    AdamWConfig decay;
    decay.lr = 1e-4;
    decay.weight_decay = 0.05;
    std::vector<NamedTensor<double>> p{{"w", T(mat({{2.0}}), true)}};
    OptimizerState<double> s{decay};
    adamw_step(p, s);
    CHECK(p[0].tensor.value()(0, 0) == doctest::Approx(2.0 * (1.0 - 5e-6)).epsilon(1e-12));
  }
}

TEST_CASE("AdamW refuses parameters without gradients") {
  std::vector<NamedTensor<double>> p{{"w", T(mat({{1.0}}))}};
  OptimizerState<double> s;
  CHECK_THROWS_AS(adamw_step(p, s), ContractError);
}
