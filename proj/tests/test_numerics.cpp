// Copyright (c) 2026 The avtts Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>

#include "avtts/adam.hpp"
#include "avtts/gradcheck.hpp"
#include "avtts/op_cases.hpp"
#include "avtts/ops.hpp"

namespace avtts {
namespace {

TEST(Forward, MatmulIdentity) {
  Graph<float> g;
  auto a = g.constant(Tensor<float>({2, 2}, {1, 2, 3, 4}));
  auto eye = g.constant(Tensor<float>({2, 2}, {1, 0, 0, 1}));
  EXPECT_EQ(matmul(a, eye).value(), Tensor<float>({2, 2}, {1, 2, 3, 4}));
}

TEST(Forward, SoftmaxUniform) {
  Graph<double> g;
  auto y = softmax(g.constant(Tensor<double>({3}, {0, 0, 0})));
  for (double v : y.value().values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Forward, LayerNormOfConstantIsZero) {
  Graph<double> g;
  auto x = g.constant(Tensor<double>({1, 4}, 2.5));
  auto y = layer_norm(x, g.constant(Tensor<double>({4}, 1.0)), g.constant(Tensor<double>({4}, 0.0)));
  for (double v : y.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(Forward, ShapeMismatchNamesBothShapes) {
  Graph<float> g;
  auto a = g.constant(Tensor<float>({2, 3}));
  auto b = g.constant(Tensor<float>({2, 2}));
  try {
    matmul(a, b);
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2, 3]"), std::string::npos);
    EXPECT_NE(msg.find("[2, 2]"), std::string::npos);
  }
  EXPECT_THROW(add(a, b), ShapeError);
}

TEST(Forward, BroadcastAddOverLeadingAxes) {
  Graph<float> g;
  auto x = g.constant(Tensor<float>({2, 2}, {1, 2, 3, 4}));
  auto b = g.constant(Tensor<float>({2}, {10, 20}));
  EXPECT_EQ(add(x, b).value(), Tensor<float>({2, 2}, {11, 22, 13, 24}));
}

TEST(Forward, Conv1dSamePadding) {
  Graph<float> g;
  // Kernel [1, 1, 1] sums each position with its neighbours.
  auto x = g.constant(Tensor<float>({1, 4, 1}, {1, 2, 3, 4}));
  auto w = g.constant(Tensor<float>({3, 1, 1}, {1, 1, 1}));
  EXPECT_EQ(conv1d(x, w).value(), Tensor<float>({1, 4, 1}, {3, 6, 9, 7}));
}

TEST(Forward, AttentionIgnoresMaskedKeys) {
  Graph<double> g;
  auto q = random_tensor({1, 3, 4}, 1);
  auto k = random_tensor({1, 3, 4}, 2);
  auto v = random_tensor({1, 3, 4}, 3);
  Tensor<double> mask({1, 3}, {1, 1, 0});
  auto y1 = attention(g.constant(q), g.constant(k), g.constant(v), mask, 2).value();
  // Changing a masked key/value must not move any output.
  for (std::size_t j = 0; j < 4; ++j) {
    k[8 + j] += 5.0;
    v[8 + j] -= 3.0;
  }
  auto y2 = attention(g.constant(q), g.constant(k), g.constant(v), mask, 2).value();
  EXPECT_LT(max_abs_diff(y1, y2), 1e-12);
}

TEST(Forward, DropoutOnlyInTraining) {
  Tensor<float> x({1000}, 1.0f);
  Graph<float> eval;
  EXPECT_EQ(dropout(eval.constant(x), 0.5).value(), x);
  Graph<float> train(nullptr, true, 3);
  auto y = dropout(train.constant(x), 0.5).value();
  std::size_t zeros = 0;
  for (float v : y.values()) {
    EXPECT_TRUE(v == 0.0f || v == 2.0f);
    zeros += v == 0.0f;
  }
  EXPECT_GT(zeros, 400u);
  EXPECT_LT(zeros, 600u);
  Graph<float> again(nullptr, true, 3);
  EXPECT_EQ(dropout(again.constant(x), 0.5).value(), y);
}

TEST(Forward, MaskedLossesIgnorePadding) {
  Graph<double> g;
  Tensor<double> target({2, 2}, {1, 2, 3, 4});
  Tensor<double> mask({2}, {1, 0});
  auto pred = g.constant(Tensor<double>({2, 2}, {2, 2, 100, -100}));
  EXPECT_DOUBLE_EQ(masked_mae(pred, target, mask).value().item(), 0.5);
  EXPECT_DOUBLE_EQ(masked_mse(pred, target, mask).value().item(), 0.5);
  EXPECT_DOUBLE_EQ(masked_mse(pred, target, Tensor<double>({2}, 0.0)).value().item(), 0.0);
}

TEST(Backward, Square) {
  ParamStore<double> s;
  s.add("x", Tensor<double>({1}, {3.0}), ParamGroup::backbone);
  Graph<double> g(&s);
  auto x = g.param("x");
  auto grads = g.backward(mul(x, x));
  EXPECT_DOUBLE_EQ(grads[0][0], 6.0);
}

TEST(Backward, SumRelu) {
  ParamStore<double> s;
  s.add("x", Tensor<double>({2}, {-1.0, 2.0}), ParamGroup::backbone);
  Graph<double> g(&s);
  auto grads = g.backward(sum(relu(g.param("x"))));
  EXPECT_EQ(grads[0], Tensor<double>({2}, {0.0, 1.0}));
}

TEST(Backward, NonScalarLossRejected) {
  ParamStore<double> s;
  s.add("x", Tensor<double>({2}, {1.0, 2.0}), ParamGroup::backbone);
  Graph<double> g(&s);
  EXPECT_THROW(g.backward(relu(g.param("x"))), ShapeError);
}

TEST(Backward, UnusedParamsGetZeroGradients) {
  ParamStore<double> s;
  s.add("used", Tensor<double>({2}, {1.0, 2.0}), ParamGroup::backbone);
  s.add("unused", Tensor<double>({3, 2}, 5.0), ParamGroup::prosody);
  Graph<double> g(&s);
  auto grads = g.backward(sum(g.param("used")));
  ASSERT_EQ(grads.size(), 2u);
  EXPECT_EQ(grads[1], Tensor<double>({3, 2}));
}

TEST(Backward, VisitsEachNodeOnceInReverseOrder) {
  ParamStore<double> s;
  s.add("x", random_tensor({3, 4}, 5), ParamGroup::backbone);
  s.add("w", random_tensor({4, 2}, 6), ParamGroup::backbone);
  Graph<double> g(&s);
  auto h = relu(matmul(g.param("x"), g.param("w")));
  auto loss = add(sum(h), sum(softmax(h)));
  g.backward(loss);
  const auto& order = g.backward_order();
  ASSERT_FALSE(order.empty());
  EXPECT_EQ(order.front(), loss.id);
  for (std::size_t i = 1; i < order.size(); ++i) EXPECT_LT(order[i], order[i - 1]);
}

TEST(Backward, MaskedPositionsGetExactlyZeroGradient) {
  ParamStore<double> s;
  s.add("p", random_tensor({2, 3, 2}, 8), ParamGroup::backbone);
  Tensor<double> mask({2, 3}, {1, 1, 0, 1, 0, 0});
  Graph<double> g(&s);
  auto grads = g.backward(masked_mae(g.param("p"), random_tensor({2, 3, 2}, 9), mask) +
                          masked_mse(g.param("p"), random_tensor({2, 3, 2}, 10), mask));
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t j = 0; j < 2; ++j)
      if (mask[r] == 0) {
        EXPECT_EQ(grads[0][r * 2 + j], 0.0);
      }
}

// ---------------------------------------------------------------------------
// Finite-difference checks, one per op.

class OpGradient : public ::testing::TestWithParam<int> {};

TEST_P(OpGradient, MatchesCentralDifferences) {
  const auto cases = op_cases();
  const auto& c = cases.at(GetParam());
  const auto res = check_op_case(c);
  EXPECT_LT(res.max_rel_error, 1e-4) << c.name << " worst at " << res.worst;
  EXPECT_GT(res.checked, 0u);
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient, ::testing::Range(0, static_cast<int>(op_cases().size())),
                         [](const auto& info) { return std::string(op_cases()[info.param].name); });

// ---------------------------------------------------------------------------
// Optimizer and initialization

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamStore<float> s;
  s.add("w", Tensor<float>({3}, {0.5f, -1.0f, 2.0f}), ParamGroup::backbone);
  Adam<float> opt(s, AdamConfig{.lr = 1e-3});
  const auto before = s["w"];
  opt.step(s, {Tensor<float>({3}, 1.0f)});
  // Tolerance is the float spacing near |w| = 2.
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(s["w"][i] - before[i], -1e-3, 3e-7);
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  ParamStore<float> s;
  s.add("w", Tensor<float>({4}, 0.25f), ParamGroup::backbone);
  Adam<float> opt(s, AdamConfig{.lr = 1e-2});
  for (int i = 0; i < 5; ++i) opt.step(s, {Tensor<float>({4})});
  EXPECT_EQ(s["w"], Tensor<float>({4}, 0.25f));
}

TEST(Adam, DeterministicAcrossRuns) {
  auto run = [] {
    ParamStore<float> s;
    s.add("w", {8, 8}, InitScheme::xavier_uniform, ParamGroup::backbone, 11);
    Adam<float> opt(s, AdamConfig{.lr = 1e-2, .warmup_steps = 3});
    Rng rng(5);
    for (int i = 0; i < 20; ++i) {
      Tensor<float> g({8, 8});
      for (auto& v : g.values()) v = float(rng.normal());
      opt.step(s, {g});
    }
    return s["w"];
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, ShapeMismatchRejected) {
  ParamStore<float> s;
  s.add("w", Tensor<float>({3}), ParamGroup::backbone);
  Adam<float> opt(s, AdamConfig{});
  EXPECT_THROW(opt.step(s, {Tensor<float>({4})}), ShapeError);
  EXPECT_THROW(opt.step(s, {}), ShapeError);
}

TEST(Adam, WarmupRampsLinearly) {
  ParamStore<float> s;
  Adam<float> opt(s, AdamConfig{.lr = 1e-3, .warmup_steps = 4});
  EXPECT_DOUBLE_EQ(opt.lr_at(1), 2.5e-4);
  EXPECT_DOUBLE_EQ(opt.lr_at(4), 1e-3);
  EXPECT_DOUBLE_EQ(opt.lr_at(100), 1e-3);
}

TEST(Init, BiasIsZero) {
  auto t = init_tensor<float>({7}, InitScheme::zeros, 3);
  for (float v : t.values()) EXPECT_EQ(v, 0.0f);
}

TEST(Init, SameSeedSameTensor) {
  EXPECT_EQ(init_tensor<float>({5, 6}, InitScheme::xavier_uniform, 17),
            init_tensor<float>({5, 6}, InitScheme::xavier_uniform, 17));
  EXPECT_EQ(init_tensor<float>({5, 6}, InitScheme::embedding_normal, 17),
            init_tensor<float>({5, 6}, InitScheme::embedding_normal, 17));
  EXPECT_NE(init_tensor<float>({5, 6}, InitScheme::xavier_uniform, 17),
            init_tensor<float>({5, 6}, InitScheme::xavier_uniform, 18));
}

TEST(Init, XavierWithinBound) {
  for (const Shape& s : {Shape{64, 32}, Shape{9, 16, 48}, Shape{300, 2}}) {
    auto t = init_tensor<double>(s, InitScheme::xavier_uniform, 1);
    const double bound = xavier_bound(s);
    double hi = 0;
    for (double v : t.values()) {
      EXPECT_LE(std::abs(v), bound);
      hi = std::max(hi, std::abs(v));
    }
    EXPECT_GT(hi, 0.9 * bound);
  }
  EXPECT_DOUBLE_EQ(xavier_bound({64, 32}), std::sqrt(6.0 / 96.0));
}

TEST(Init, EmbeddingScale) {
  auto t = init_tensor<double>({400, 64}, InitScheme::embedding_normal, 2);
  double ss = 0;
  for (double v : t.values()) ss += v * v;
  EXPECT_NEAR(std::sqrt(ss / double(t.size())), 1.0 / 8.0, 0.005);
}

}  // namespace
}  // namespace avtts
