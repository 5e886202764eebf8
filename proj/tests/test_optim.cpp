#include <gtest/gtest.h>

#include <cmath>

#include "mtk/optim.hpp"

using namespace mtk;

namespace {

ModelParams scalar(float v) {
  ModelParams p;
  p.tensors.emplace_back(Shape{1}, std::vector<float>{v});
  return p;
}

GradientSet grad(double g) {
  GradientSet s;
  s.tensors.emplace_back(Shape{1}, std::vector<double>{g});
  return s;
}

}  // namespace

TEST(Sgd, PlainStep) {
  auto p = scalar(1.0f);
  OptimizerState st({OptimizerKind::sgd_momentum, 0.1, 0.0}, p);
  optimizer_step(st, p, grad(0.5));
  EXPECT_FLOAT_EQ(p.tensors[0][0], 0.95f);
  EXPECT_EQ(st.step, 1u);
}

TEST(Sgd, MomentumAccumulates) {
  auto p = scalar(0.0f);
  OptimizerState st({OptimizerKind::sgd_momentum, 0.1, 0.9}, p);
  double v = 0.0, want = 0.0;
  const double gs[4] = {1.0, -0.5, 0.25, 2.0};
  for (double g : gs) {
    optimizer_step(st, p, grad(g));
    v = 0.9 * v + g;
    want -= 0.1 * v;
    EXPECT_NEAR(p.tensors[0][0], want, 1e-6);
  }
}

TEST(Optimizer, ZeroGradientLeavesParams) {
  for (auto kind : {OptimizerKind::sgd_momentum, OptimizerKind::adam}) {
    auto p = scalar(0.3f);
    OptimizerState st({kind, 0.01}, p);
    optimizer_step(st, p, grad(0.0));
    EXPECT_EQ(p.tensors[0][0], 0.3f);
    EXPECT_EQ(st.step, 1u);
  }
}

TEST(Adam, MatchesScalarHandComputation) {
  const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  auto p = scalar(0.5f);
  OptimizerState st({OptimizerKind::adam, lr, b1, b2, eps}, p);
  double m = 0, v = 0, x = 0.5;
  const double gs[5] = {0.3, -0.1, 0.7, 0.7, -2.0};
  for (int t = 1; t <= 5; ++t) {
    const double g = gs[t - 1];
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    x -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
    optimizer_step(st, p, grad(g));
    EXPECT_NEAR(p.tensors[0][0], x, 1e-6) << "step " << t;
    x = p.tensors[0][0];
  }
}

TEST(Adam, FirstStepMagnitudeIsLearningRate) {
  for (double g : {1e-3, 0.5, -7.0}) {
    auto p = scalar(0.0f);
    OptimizerState st({OptimizerKind::adam, 0.01}, p);
    optimizer_step(st, p, grad(g));
    EXPECT_NEAR(std::abs(p.tensors[0][0]), 0.01, 1e-6);
  }
}

TEST(Optimizer, RejectsMismatchedGradients) {
  auto p = scalar(0.0f);
  OptimizerState st({OptimizerKind::sgd_momentum, 0.1}, p);
  GradientSet g;
  g.tensors.emplace_back(Shape{2});
  EXPECT_THROW(optimizer_step(st, p, g), InvalidInput);
  EXPECT_THROW(OptimizerState({OptimizerKind::adam, 0.0}, p), InvalidInput);
}

TEST(Optimizer, JsonRoundTrip) {
  OptimizerConfig c{OptimizerKind::adam, 0.002, 0.8, 0.99, 1e-7};
  auto back = optimizer_config_from_json(to_json(c));
  EXPECT_EQ(back.kind, c.kind);
  EXPECT_EQ(back.learning_rate, c.learning_rate);
  EXPECT_EQ(back.momentum, c.momentum);
  EXPECT_EQ(back.beta2, c.beta2);
  EXPECT_EQ(back.epsilon, c.epsilon);
}
