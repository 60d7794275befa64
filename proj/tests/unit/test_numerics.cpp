// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "gradcheck.hpp"
#include "sr/numerics/ops.hpp"
#include "sr/numerics/random.hpp"

using sr::Shape;
using sr::Tape;
using sr::Tensor;
using sr::Var;
namespace ops = sr::ops;

namespace {

template <class T>
Tensor<T> random_tensor(sr::Rng& rng, Shape shape, double scale = 1.0) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.normal() * scale);
  return t;
}

template <class T>
Tensor<T> matmul_value(const Tensor<T>& a, const Tensor<T>& b) {
  Tape<T> tape;
  return tape.value(ops::matmul(tape, tape.constant(a), tape.constant(b)));
}

}  // namespace

TEST_CASE("matmul: identity and column selection") {
  const Tensor<float> eye(Shape{2, 2}, {1, 0, 0, 1});
  CHECK(matmul_value(eye, eye) == eye);
  const Tensor<float> a(Shape{2, 2}, {1, 2, 3, 4});
  const Tensor<float> col(Shape{2, 1}, {0, 1});
  CHECK(matmul_value(a, col) == Tensor<float>(Shape{2, 1}, {2, 4}));
}

TEST_CASE("matmul: random 3x4 by 4x5 matches naive triple loop") {
  sr::Rng rng(1);
  const auto a = random_tensor<float>(rng, {3, 4});
  const auto b = random_tensor<float>(rng, {4, 5});
  const auto c = matmul_value(a, b);
  REQUIRE(c.shape() == Shape{3, 5});
  const double eps = std::numeric_limits<float>::epsilon();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      double oracle = 0, mag = 0;
      for (std::size_t p = 0; p < 4; ++p) {
        oracle += double(a[i * 4 + p]) * double(b[p * 5 + j]);
        mag += std::abs(double(a[i * 4 + p]) * double(b[p * 5 + j]));
      }
      CHECK(std::abs(c[i * 5 + j] - oracle) <= 8 * eps * mag);
    }
}

TEST_CASE("matmul: shape mismatch reports both shapes") {
  Tape<float> tape;
  const Var a = tape.constant(Tensor<float>(Shape{2, 3}));
  const Var b = tape.constant(Tensor<float>(Shape{4, 5}));
  try {
    ops::matmul(tape, a, b);
    FAIL("expected ShapeError");
  } catch (const sr::ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,5]") != std::string::npos);
  }
}

TEST_CASE("cross_entropy: closed-form cases") {
  Tape<double> tape;
  const Var uniform = tape.constant(Tensor<double>(Shape{1, 2, 16}, 0.0));
  const std::vector<std::int32_t> tg = {3, 11};
  const std::vector<double> mask = {1, 1};
  CHECK(tape.scalar(ops::cross_entropy(tape, uniform, tg, mask)) == doctest::Approx(std::log(16.0)).epsilon(1e-12));

  Tensor<double> peaked(Shape{1, 4}, 0.0);
  peaked[2] = 50;
  const std::vector<std::int32_t> tg2 = {2};
  const std::vector<double> m1 = {1};
  CHECK(tape.scalar(ops::cross_entropy(tape, tape.constant(peaked), tg2, m1)) < 1e-20);
}

TEST_CASE("cross_entropy: random case matches direct summation in 64-bit") {
  sr::Rng rng(5);
  const auto logits = random_tensor<float>(rng, {2, 3, 7}, 3.0);
  const std::vector<std::int32_t> targets = {0, 6, 3, 2, 2, 5};
  const std::vector<float> mask = {1, 0, 1, 1, 1, 0};
  Tape<float> tape;
  const float got = tape.scalar(ops::cross_entropy(tape, tape.constant(logits), targets, mask));
  double total = 0;
  int count = 0;
  for (std::size_t r = 0; r < 6; ++r) {
    if (mask[r] == 0) continue;
    double denom = 0;
    for (std::size_t c = 0; c < 7; ++c) denom += std::exp(double(logits[r * 7 + c]));
    total += -std::log(std::exp(double(logits[r * 7 + static_cast<std::size_t>(targets[r])])) / denom);
    ++count;
  }
  CHECK(got == doctest::Approx(total / count).epsilon(1e-6));
}

TEST_CASE("cross_entropy: invariant to per-row logit shifts") {
  sr::Rng rng(6);
  auto logits = random_tensor<double>(rng, {4, 9});
  const std::vector<std::int32_t> targets = {1, 2, 3, 4};
  const std::vector<double> mask = {1, 1, 1, 1};
  Tape<double> tape;
  const double base = tape.scalar(ops::cross_entropy(tape, tape.constant(logits), targets, mask));
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 9; ++c) logits[r * 9 + c] += 1000.0 * double(r + 1);
  CHECK(tape.scalar(ops::cross_entropy(tape, tape.constant(logits), targets, mask)) == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("cross_entropy: all-zero mask is an error") {
  Tape<float> tape;
  const Var z = tape.constant(Tensor<float>(Shape{2, 4}));
  const std::vector<std::int32_t> tg = {0, 1};
  const std::vector<float> mask = {0, 0};
  CHECK_THROWS_AS(ops::cross_entropy(tape, z, tg, mask), std::invalid_argument);
  const std::vector<std::int32_t> bad = {0, 4};
  const std::vector<float> ones = {1, 1};
  CHECK_THROWS_AS(ops::cross_entropy(tape, z, bad, ones), std::out_of_range);
}

TEST_CASE("softmax: rows sum to one and ignore constant shifts") {
  sr::Rng rng(8);
  auto x = random_tensor<float>(rng, {5, 11}, 4.0);
  Tape<float> tape;
  const auto y = tape.value(ops::softmax(tape, tape.constant(x)));
  for (std::size_t r = 0; r < 5; ++r) {
    float s = 0;
    for (std::size_t c = 0; c < 11; ++c) s += y[r * 11 + c];
    CHECK(std::abs(s - 1.0f) < 1e-6);
  }
  for (std::size_t c = 0; c < 11; ++c) x[2 * 11 + c] += 17.5f;
  const auto y2 = tape.value(ops::softmax(tape, tape.constant(x)));
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(y[i] - y2[i]) < 1e-6);
}

TEST_CASE("grad: quadratic and constant losses") {
  sr::Rng rng(9);
  const std::vector<Tensor<double>> params = {random_tensor<double>(rng, {3, 4}), random_tensor<double>(rng, {5})};
  auto sum_sq = [](Tape<double>& t, std::span<const Var> p) {
    return ops::add(t, ops::sum(t, ops::mul(t, p[0], p[0])), ops::sum(t, ops::mul(t, p[1], p[1])));
  };
  const auto g = sr::grad<double>(sum_sq, std::span<const Tensor<double>>(params));
  for (std::size_t i = 0; i < params.size(); ++i)
    for (std::size_t j = 0; j < params[i].size(); ++j) CHECK(g[i][j] == doctest::Approx(2 * params[i][j]));

  auto constant = [](Tape<double>& t, std::span<const Var>) { return t.constant(Tensor<double>(Shape{}, {4.2})); };
  const auto z = sr::grad<double>(constant, std::span<const Tensor<double>>(params));
  for (const auto& gt : z) {
    CHECK(gt.shape() == params[&gt - z.data()].shape());
    for (double v : gt.data()) CHECK(v == 0.0);
  }
}

TEST_CASE("grad: non-finite loss names the first non-finite intermediate") {
  const std::vector<Tensor<double>> params = {Tensor<double>(Shape{2}, {-1.0, 2.0})};
  auto bad = [](Tape<double>& t, std::span<const Var> p) {
    return ops::sum(t, ops::gelu(t, ops::log(t, p[0])));
  };
  try {
    sr::grad<double>(bad, std::span<const Tensor<double>>(params));
    FAIL("expected NonFiniteError");
  } catch (const sr::NonFiniteError& e) {
    CHECK(e.op() == "log");
    CHECK(e.node() == 1);
  }
}

TEST_CASE("tape replay reproduces the recorded scalar exactly") {
  sr::Rng rng(10);
  Tape<float> tape;
  const Var w = tape.leaf(random_tensor<float>(rng, {6, 4}));
  const Var x = tape.constant(random_tensor<float>(rng, {3, 6}));
  const Var y = ops::gelu(tape, ops::rms_norm(tape, ops::matmul(tape, x, w), 1e-6f));
  const Var loss = ops::sum(tape, ops::softmax(tape, y));
  const float recorded = tape.scalar(loss);
  CHECK(tape.replay(loss) == recorded);
}

TEST_CASE("every op's gradient matches central differences at 64-bit") {
  sr::Rng rng(12);
  using sr::testing::grad_check;
  const double tol = 1e-4;

  SUBCASE("elementwise, bias, softmax, log, gelu") {
    std::vector<Tensor<double>> p = {random_tensor<double>(rng, {3, 5}), random_tensor<double>(rng, {3, 5}),
                                     random_tensor<double>(rng, {5})};
    auto f = [](Tape<double>& t, std::span<const Var> v) {
      const Var a = ops::add_bias(t, ops::mul(t, v[0], ops::gelu(t, v[1])), v[2]);
      const Var s = ops::softmax(t, ops::scale(t, a, 0.7));
      return ops::sum(t, ops::mul(t, ops::log(t, s), ops::add(t, v[0], v[1])));
    };
    const auto r = grad_check(f, p);
    CHECK_MESSAGE(r.max_error < tol, r.worst);
  }
  SUBCASE("rms_norm, matmul (contract 1 and 2), matmul_nt") {
    std::vector<Tensor<double>> p = {random_tensor<double>(rng, {2, 3, 4}), random_tensor<double>(rng, {4, 2, 3}),
                                     random_tensor<double>(rng, {2, 3, 5}), random_tensor<double>(rng, {6, 5})};
    auto f = [](Tape<double>& t, std::span<const Var> v) {
      const Var a = ops::matmul(t, ops::rms_norm(t, v[0], 1e-6), v[1]);   // [2,3,2,3]
      const Var b = ops::matmul(t, a, v[2], 2);                            // [2,3,5]
      const Var c = ops::matmul_nt(t, b, v[3]);                            // [2,3,6]
      return ops::sum(t, ops::mul(t, c, c));
    };
    const auto r = grad_check(f, p);
    CHECK_MESSAGE(r.max_error < tol, r.worst);
  }
  SUBCASE("head projection, rope, causal attention") {
    std::vector<Tensor<double>> p = {random_tensor<double>(rng, {2, 4, 6}), random_tensor<double>(rng, {3, 2, 6, 4}),
                                     random_tensor<double>(rng, {2, 4, 2, 4})};
    auto f = [](Tape<double>& t, std::span<const Var> v) {
      const Var q = ops::rope(t, ops::head_project(t, v[0], v[1], 0), 10000.0);
      const Var k = ops::rope(t, ops::head_project(t, v[0], v[1], 1), 10000.0);
      const Var val = ops::head_project(t, v[0], v[1], 2);
      const Var a = ops::causal_attention(t, q, k, val);
      return ops::sum(t, ops::mul(t, a, v[2]));
    };
    const auto r = grad_check(f, p);
    CHECK_MESSAGE(r.max_error < tol, r.worst);
  }
  SUBCASE("embedding, cross entropy, KL to reference, MSE") {
    std::vector<Tensor<double>> p = {random_tensor<double>(rng, {5, 3}), random_tensor<double>(rng, {4, 3})};
    const std::vector<std::int32_t> ids = {0, 4, 4, 2, 1, 3};
    const std::vector<std::int32_t> targets = {1, 0, 3, 3, 2, 1};
    const std::vector<double> mask = {1, 1, 0, 1, 1, 1};
    const auto ref = sr::log_softmax(random_tensor<double>(rng, {6, 4}));
    const auto target = random_tensor<double>(rng, {2, 3, 4});
    auto f = [&](Tape<double>& t, std::span<const Var> v) {
      const Var e = ops::embedding(t, v[0], ids, Shape{2, 3});
      const Var z = ops::matmul_nt(t, e, v[1]);  // [2,3,4]
      const Var ce = ops::cross_entropy(t, z, targets, mask);
      const Var kl = ops::kl_to_reference(t, z, ref.reshaped(Shape{2, 3, 4}), mask);
      return ops::add(t, ops::add(t, ce, ops::scale(t, kl, 3.0)), ops::mean_squared_error(t, z, target));
    };
    const auto r = grad_check(f, p);
    CHECK_MESSAGE(r.max_error < tol, r.worst);
  }
}

TEST_CASE("kl_to_reference: direct-summation values") {
  Tape<double> tape;
  const std::vector<double> mask = {1};
  // p_ref = (1, 0) as log-probs with a -inf-like floor, p_theta uniform
  Tensor<double> ref_onehot(Shape{1, 2}, {0.0, -std::numeric_limits<double>::infinity()});
  const Var uniform = tape.constant(Tensor<double>(Shape{1, 2}, 0.0));
  CHECK(tape.scalar(ops::kl_to_reference(tape, uniform, ref_onehot, mask)) == doctest::Approx(std::numbers::ln2));

  Tensor<double> ref(Shape{1, 2}, {std::log(0.75), std::log(0.25)});
  const double expected = 0.75 * std::log(1.5) + 0.25 * std::log(0.5);
  CHECK(tape.scalar(ops::kl_to_reference(tape, uniform, ref, mask)) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(expected == doctest::Approx(0.13081).epsilon(1e-4));
}
