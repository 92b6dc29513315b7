// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "mmfuse/gradcheck.hpp"
#include "mmfuse/seta.hpp"

using namespace mmfuse;

namespace {

Tensor<double> random_items(std::size_t n, std::size_t d, Rng& rng) {
  std::normal_distribution<double> g;
  Tensor<double> t({n, d});
  for (auto& v : t.values()) v = g(rng);
  return t;
}

}  // namespace

TEST(SeTa, ScoresFollowTheDefinition) {
  Rng rng(1);
  Tensor<double> anchor({5});
  for (std::size_t i = 0; i < 5; ++i) anchor[i] = 0.3 * static_cast<double>(i) - 0.5;
  auto p = SeTaParams<double>::create("s", 4, 6, anchor, rng);
  const Tensor<double> items = random_items(3, 4, rng);
  Tape<double> t(false);
  const auto vars = seta_weights(t.constant(items), Mask(3, true), p);
  double denom = 0;
  std::vector<double> e(3);
  for (std::size_t i = 0; i < 3; ++i) {
    double sem = 0, task = 0;
    for (std::size_t a = 0; a < 6; ++a) {
      double u = p.b1.value[a];
      for (std::size_t k = 0; k < 4; ++k) u += p.w1.value.at(a, k) * items.at(i, k);
      sem += std::tanh(u) * p.ctx.value[a];
    }
    for (std::size_t a = 0; a < 5; ++a) {
      double v = p.b2.value[a];
      for (std::size_t k = 0; k < 4; ++k) v += p.w2.value.at(a, k) * items.at(i, k);
      task += std::tanh(v) * anchor[a];
    }
    EXPECT_NEAR(vars.semantic.value()[i], sem, 1e-12);
    EXPECT_NEAR(vars.task.value()[i], task, 1e-12);
    e[i] = std::exp(sem + task);
    denom += e[i];
  }
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(vars.weights.value()[i], e[i] / denom, 1e-12);
}

TEST(SeTa, NoAnchorMeansZeroTaskScores) {
  Rng rng(2);
  auto p = SeTaParams<double>::create("s", 4, 4, std::nullopt, rng);
  EXPECT_EQ(p.w2.value.shape(), (Shape{0, 4}));
  Tape<double> t(false);
  const auto task = task_scores(t.constant(random_items(5, 4, rng)), p).value();
  for (double v : task.values()) EXPECT_EQ(v, 0.0);
}

TEST(SeTa, MaskedPositionsGetExactlyZero) {
  Rng rng(3);
  auto p = SeTaParams<double>::create("s", 3, 3, Tensor<double>({3}, 0.5), rng);
  Tape<double> t(false);
  const Mask mask{false, true, false, true};
  const auto w = seta_weights(t.constant(random_items(4, 3, rng)), mask, p).weights.value();
  EXPECT_EQ(w[0], 0.0);
  EXPECT_EQ(w[2], 0.0);
  EXPECT_NEAR(w[1] + w[3], 1.0, 1e-12);
}

TEST(SeTa, UniformWeights) {
  Tape<double> t(false);
  const auto w = uniform_weights(t, Mask{true, false, true, true}).value();
  EXPECT_EQ(w[1], 0.0);
  EXPECT_DOUBLE_EQ(w[0], 1.0 / 3);
}

TEST(SeTa, GradientsOfAllParameters) {
  Rng rng(4);
  auto p = SeTaParams<double>::create("s", 4, 5, Tensor<double>({3}, 0.25), rng);
  const Tensor<double> items = random_items(6, 4, rng);
  Parameter<double> x{"items", items, true};
  const Mask mask{true, true, false, true, true, true};
  auto loss = [&](Tape<double>& t) {
    auto vars = seta_weights(t.param(x), mask, p);
    Var<double> out = attend(t.param(x), vars.weights);
    return sum(mul(out, out));
  };
  auto params = p.parameters();
  params.push_back(&x);
  const auto r = grad_check(loss, params);
  EXPECT_TRUE(r.passed) << r.failure;
}

TEST(SeTa, AttendStaysInTheHull) {
  Rng rng(5);
  auto p = SeTaParams<double>::create("s", 3, 3, std::nullopt, rng);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor<double> items = random_items(4, 3, rng);
    Tape<double> t(false);
    Var<double> it = t.constant(items);
    const auto out = attend(it, seta_weights(it, Mask(4, true), p).weights).value();
    for (std::size_t k = 0; k < 3; ++k) {
      double lo = 1e300, hi = -1e300;
      for (std::size_t i = 0; i < 4; ++i) lo = std::min(lo, items.at(i, k)), hi = std::max(hi, items.at(i, k));
      EXPECT_GE(out[k], lo - 1e-12);
      EXPECT_LE(out[k], hi + 1e-12);
    }
  }
}
