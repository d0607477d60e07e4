/* Copyright 2026 The voxelstruct Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#include <gtest/gtest.h>

#include <cmath>

#include "voxelstruct/ops.hpp"
#include "voxelstruct/rng.hpp"

namespace voxelstruct {
namespace {

Tensor rnd(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Weighted sum so that every output element gets a distinct upstream gradient.
Var probe(Var y, std::uint64_t seed) { return sum(mul(y, y.tape().constant(rnd(y.shape(), seed)))); }

TEST(Dense, IdentityWeights) {
  Tape t;
  Var y = dense(t.constant(Tensor::from({1, 2}, {1, 2})), t.constant(Tensor::from({2, 2}, {1, 0, 0, 1})),
                t.constant(Tensor::from({2}, {0, 0})));
  EXPECT_EQ(y.value(), Tensor::from({1, 2}, {1, 2}));
}

TEST(Dense, HandSum) {
  Tape t;
  Var y = dense(t.constant(Tensor::from({1, 2}, {1, 1})), t.constant(Tensor::from({2, 1}, {2, 3})),
                t.constant(Tensor::from({1}, {1})));
  EXPECT_EQ(y.value().item(), 6.0);
}

TEST(Dense, ShapeMismatchNamesBothShapes) {
  Tape t;
  try {
    dense(t.constant(Tensor({2, 3})), t.constant(Tensor({4, 2})), t.constant(Tensor({2})));
    FAIL();
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4,2]"), std::string::npos) << msg;
  }
}

TEST(Dense, GradientsMatchFiniteDifferences) {
  const Tensor x = rnd({3, 4}, 1), w = rnd({4, 5}, 2), b = rnd({5}, 3);
  EXPECT_LE(gradient_check([&](Var v) { return sum(dense(v.tape().constant(x), v, v.tape().constant(b))); }, w), 1e-6);
  EXPECT_LE(gradient_check([&](Var v) { return probe(dense(v, v.tape().constant(w), v.tape().constant(b)), 4); }, x),
            1e-6);
  EXPECT_LE(gradient_check([&](Var v) { return probe(dense(v.tape().constant(x), v.tape().constant(w), v), 5); }, b),
            1e-6);
}

TEST(Conv3d, AllOnesSum) {
  Tape t;
  Var y = conv3d(t.constant(Tensor({1, 1, 3, 3, 3}, 1.0)), t.constant(Tensor({1, 1, 3, 3, 3}, 1.0)), 1, 0);
  ASSERT_EQ(y.value().size(), 1u);
  EXPECT_EQ(y.value()[0], 27.0);
}

TEST(Conv3d, ImpulseResponseIsTheKernel) {
  // Cross-correlation of a centered delta gives the kernel flipped about its center.
  const std::size_t n = 5, k = 3;
  Tensor x({1, 1, n, n, n});
  x[2 + n * (2 + n * 2)] = 1.0;
  const Tensor kern = rnd({1, 1, k, k, k}, 7);
  Tape t;
  Var y = conv3d(t.constant(x), t.constant(kern), 1, k / 2);
  ASSERT_EQ(y.shape(), (Shape{1, 1, n, n, n}));
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < k; ++b)
      for (std::size_t c = 0; c < k; ++c) {
        const double out = y.value()[(1 + c) + n * ((1 + b) + n * (1 + a))];
        const double expect = kern[(k - 1 - c) + k * ((k - 1 - b) + k * (k - 1 - a))];
        EXPECT_EQ(out, expect);
      }
}

TEST(Conv3d, NonIntegralOutputIsAConfigError) {
  EXPECT_THROW(conv_output_extent(8, 3, 2, 0), ConfigError);
  EXPECT_THROW(conv_output_extent(2, 5, 1, 0), ConfigError);
  EXPECT_EQ(conv_output_extent(8, 4, 2, 1), 4u);
  Tape t;
  EXPECT_THROW(conv3d(t.constant(Tensor({1, 1, 8, 8, 8})), t.constant(Tensor({1, 1, 3, 3, 3})), 2, 0), ConfigError);
}

TEST(Conv3d, ChannelMismatch) {
  Tape t;
  EXPECT_THROW(conv3d(t.constant(Tensor({1, 2, 4, 4, 4})), t.constant(Tensor({1, 3, 3, 3, 3})), 1, 1), DimensionError);
}

TEST(Conv3d, GradientsMatchFiniteDifferences) {
  const Tensor x = rnd({2, 2, 4, 4, 4}, 11), k = rnd({3, 2, 3, 3, 3}, 12);
  EXPECT_LE(gradient_check([&](Var v) { return probe(conv3d(v, v.tape().constant(k), 1, 1), 13); }, x), 1e-5);
  EXPECT_LE(gradient_check([&](Var v) { return probe(conv3d(v.tape().constant(x), v, 1, 1), 14); }, k), 1e-5);
  const Tensor k4 = rnd({2, 2, 4, 4, 4}, 15);
  EXPECT_LE(gradient_check([&](Var v) { return probe(conv3d(v, v.tape().constant(k4), 2, 1), 16); }, x), 1e-5);
}

TEST(ConvTranspose3d, ShapeLawDoublesExtent) {
  Tape t;
  Var y = conv_transpose3d(t.constant(Tensor({1, 1, 3, 3, 3}, 1.0)), t.constant(Tensor({1, 1, 2, 2, 2}, 1.0)), 2, 0);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 6, 6, 6}));
  for (double v : y.value().data()) EXPECT_EQ(v, 1.0);
}

TEST(ConvTranspose3d, InnerProductAdjoint) {
  const Tensor x = rnd({2, 3, 8, 8, 8}, 21), k = rnd({4, 3, 4, 4, 4}, 22);
  Tape t;
  Var cx = conv3d(t.constant(x), t.constant(k), 2, 1);
  const Tensor y = rnd(cx.shape(), 23);
  Var ty = conv_transpose3d(t.constant(y), t.constant(k), 2, 1);
  ASSERT_EQ(ty.shape(), x.shape());
  const double lhs = dot(cx.value(), y), rhs = dot(x, ty.value());
  EXPECT_LE(std::abs(lhs - rhs), 1e-10 * std::max(1.0, std::abs(lhs)));
}

TEST(ConvTranspose3d, GradientsMatchFiniteDifferences) {
  const Tensor y = rnd({2, 2, 2, 2, 2}, 31), k = rnd({2, 3, 4, 4, 4}, 32);
  EXPECT_LE(gradient_check([&](Var v) { return probe(conv_transpose3d(v, v.tape().constant(k), 2, 1), 33); }, y), 1e-5);
  EXPECT_LE(gradient_check([&](Var v) { return probe(conv_transpose3d(v.tape().constant(y), v, 2, 1), 34); }, k), 1e-5);
}

TEST(Activation, ReluValues) {
  Tape t;
  Var y = relu(t.constant(Tensor::from({2}, {-1, 2})));
  EXPECT_EQ(y.value(), Tensor::from({2}, {0, 2}));
}

TEST(Activation, SigmoidRange) {
  Tape t;
  Var y = sigmoid(t.constant(Tensor::from({3}, {0.0, -30.0, 30.0})));
  EXPECT_EQ(y.value()[0], 0.5);
  EXPECT_GT(y.value()[1], 0.0);
  EXPECT_LT(y.value()[2], 1.0);
}

TEST(Activation, GradientsMatchFiniteDifferences) {
  // Keep relu inputs away from the kink.
  Tensor x = rnd({20}, 41, 0.1, 2.0);
  for (std::size_t i = 0; i < x.size(); i += 2) x[i] = -x[i];
  EXPECT_LE(gradient_check([](Var v) { return probe(relu(v), 42); }, x), 1e-7);
  EXPECT_LE(gradient_check([](Var v) { return probe(sigmoid(v), 43); }, rnd({20}, 44, -4, 4)), 1e-7);
}

TEST(MaxPool3d, BlockMaxima) {
  Tensor x({1, 1, 4, 4, 4});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i);
  Tape t;
  Var y = maxpool3d(t.constant(x), 2);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2, 2}));
  for (std::size_t z = 0; z < 2; ++z)
    for (std::size_t yy = 0; yy < 2; ++yy)
      for (std::size_t xx = 0; xx < 2; ++xx) {
        const double expect = static_cast<double>((2 * xx + 1) + 4 * ((2 * yy + 1) + 4 * (2 * z + 1)));
        EXPECT_EQ(y.value()[xx + 2 * (yy + 2 * z)], expect);
      }
}

TEST(MaxPool3d, TiesGoToFirstElement) {
  Tape t;
  Var x = t.leaf(Tensor({1, 1, 2, 2, 2}, 3.0), true);
  t.backward(sum(maxpool3d(x, 2)));
  const Tensor& g = t.grad(x);
  EXPECT_EQ(g[0], 1.0);
  for (std::size_t i = 1; i < g.size(); ++i) EXPECT_EQ(g[i], 0.0);
}

TEST(MaxPool3d, IndivisibleIsAConfigError) {
  Tape t;
  EXPECT_THROW(maxpool3d(t.constant(Tensor({1, 1, 3, 4, 4})), 2), ConfigError);
}

TEST(MaxPool3d, GradientOneHotPerWindowAndMatchesFiniteDifferences) {
  const Tensor x = rnd({2, 2, 4, 4, 4}, 51);  // distinct values, no ties
  EXPECT_LE(gradient_check([](Var v) { return probe(maxpool3d(v, 2), 52); }, x), 1e-6);
  Tape t;
  Var v = t.leaf(x, true);
  t.backward(sum(maxpool3d(v, 2)));
  std::size_t nonzero = 0;
  for (double g : t.grad(v).data()) nonzero += g != 0.0;
  EXPECT_EQ(nonzero, x.size() / 8);
}

TEST(Reparameterize, ClosedForms) {
  Tape t;
  Var mu = t.constant(Tensor::from({1, 2}, {0.5, -1.0}));
  Var lv = t.constant(Tensor({1, 2}));
  EXPECT_EQ(reparameterize(mu, lv, Tensor({1, 2})).value(), mu.value());
  EXPECT_EQ(reparameterize(mu, lv, Tensor({1, 2}, 1.0)).value(), Tensor::from({1, 2}, {1.5, 0.0}));
}

TEST(Reparameterize, GradientsFlowToMomentsOnly) {
  const Tensor mu = rnd({2, 3}, 61), lv = rnd({2, 3}, 62), noise = rnd({2, 3}, 63);
  EXPECT_LE(gradient_check([&](Var v) { return probe(reparameterize(v.tape().constant(mu), v, noise), 64); }, lv), 1e-6);
  EXPECT_LE(gradient_check([&](Var v) { return probe(reparameterize(v, v.tape().constant(lv), noise), 65); }, mu), 1e-6);
}

TEST(Elementwise, GradientsMatchFiniteDifferences) {
  const Tensor a = rnd({3, 4}, 71), b = rnd({3, 4}, 72);
  EXPECT_LE(gradient_check([&](Var v) { return probe(add(v, v.tape().constant(b)), 73); }, a), 1e-8);
  EXPECT_LE(gradient_check([&](Var v) { return probe(sub(v.tape().constant(b), v), 74); }, a), 1e-8);
  EXPECT_LE(gradient_check([&](Var v) { return probe(mul(v, v.tape().constant(b)), 75); }, a), 1e-8);
  EXPECT_LE(gradient_check([](Var v) { return probe(scale(v, -2.5), 76); }, a), 1e-8);
  EXPECT_LE(gradient_check([](Var v) { return probe(add_scalar(v, 3.0), 77); }, a), 1e-8);
  EXPECT_LE(gradient_check([](Var v) { return mean(v); }, a), 1e-8);
  EXPECT_LE(gradient_check([](Var v) { return probe(reshape(v, {2, 6}), 78); }, a), 1e-8);
  EXPECT_LE(gradient_check([](Var v) { return probe(apply_mask(v, rnd({3, 4}, 79, 0, 2)), 80); }, a), 1e-8);
}

TEST(ChannelBias, GradientsMatchFiniteDifferences) {
  const Tensor x = rnd({2, 3, 2, 2, 2}, 81), b = rnd({3}, 82);
  EXPECT_LE(gradient_check([&](Var v) { return probe(add_channel_bias(v.tape().constant(x), v), 83); }, b), 1e-8);
  EXPECT_LE(gradient_check([&](Var v) { return probe(add_channel_bias(v, v.tape().constant(b)), 84); }, x), 1e-8);
}

TEST(BatchNorm, TrainModeNormalizesAndDifferentiates) {
  const Tensor x = rnd({4, 2, 2, 2, 2}, 91), g = rnd({2}, 92, 0.5, 1.5), be = rnd({2}, 93);
  Tape t;
  Tensor m, var;
  Var y = batch_norm_train(t.constant(x), t.constant(Tensor({2}, 1.0)), t.constant(Tensor({2})), 1e-5, &m, &var);
  // Per channel: zero mean, unit variance (up to eps).
  for (std::size_t c = 0; c < 2; ++c) {
    double s = 0, s2 = 0;
    std::size_t n = 0;
    for (std::size_t b = 0; b < 4; ++b)
      for (std::size_t i = 0; i < 8; ++i) {
        const double v = y.value()[(b * 2 + c) * 8 + i];
        s += v;
        s2 += v * v;
        ++n;
      }
    EXPECT_NEAR(s / n, 0.0, 1e-12);
    EXPECT_NEAR(s2 / n, 1.0, 1e-3);
  }
  EXPECT_LE(gradient_check([&](Var v) {
              Tape& tp = v.tape();
              return probe(batch_norm_train(v, tp.constant(g), tp.constant(be), 1e-5, nullptr, nullptr), 94);
            }, x), 1e-4);
  EXPECT_LE(gradient_check([&](Var v) {
              Tape& tp = v.tape();
              return probe(batch_norm_train(tp.constant(x), v, tp.constant(be), 1e-5, nullptr, nullptr), 95);
            }, g), 1e-4);
}

TEST(BatchNorm, EvalModeUsesGivenStatistics) {
  Tape t;
  Var y = batch_norm_eval(t.constant(Tensor({1, 1, 1, 1, 2}, 3.0)), t.constant(Tensor({1}, 2.0)),
                          t.constant(Tensor({1}, 1.0)), Tensor({1}, 1.0), Tensor({1}, 4.0), 0.0);
  EXPECT_DOUBLE_EQ(y.value()[0], 2.0 * (3.0 - 1.0) / 2.0 + 1.0);
}

}  // namespace
}  // namespace voxelstruct
