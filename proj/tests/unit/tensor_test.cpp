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
#include <limits>

#include "voxelstruct/autodiff.hpp"
#include "voxelstruct/ops.hpp"
#include "voxelstruct/rng.hpp"

namespace voxelstruct {
namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

TEST(Tensor, ShapeMatchesDataLength) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_EQ(t.dim(1), 3u);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  EXPECT_THROW(t.dim(3), DimensionError);
}

TEST(Tensor, ReshapeKeepsData) {
  Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor r = t.reshaped({3, 2});
  EXPECT_EQ(r.storage(), t.storage());
  EXPECT_THROW(t.reshaped({4, 2}), DimensionError);
}

TEST(Tensor, ScalarItem) {
  EXPECT_EQ(Tensor::scalar(3.5).item(), 3.5);
  EXPECT_THROW(Tensor({2}).item(), DimensionError);
}

TEST(Tensor, FiniteCheck) {
  Tensor t({3}, 1.0);
  EXPECT_TRUE(t.all_finite());
  t[1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(t.all_finite());
}

TEST(Tape, SumGivesOnes) {
  Tape tape;
  Var x = tape.leaf(random_tensor({3, 4}, 1), true);
  tape.backward(sum(x));
  for (double g : tape.grad(x).data()) EXPECT_EQ(g, 1.0);
}

TEST(Tape, SumOfSquaresGivesTwoX) {
  Tape tape;
  Tensor xv = random_tensor({5}, 2);
  Var x = tape.leaf(xv, true);
  tape.backward(sum(mul(x, x)));
  for (std::size_t i = 0; i < xv.size(); ++i) EXPECT_DOUBLE_EQ(tape.grad(x)[i], 2.0 * xv[i]);
}

TEST(Tape, GradBuffersMatchShapes) {
  Tape tape;
  Var a = tape.leaf(random_tensor({2, 3}, 3), true);
  Var b = tape.leaf(random_tensor({3, 4}, 4), true);
  Var c = tape.leaf(random_tensor({4}, 5), true);
  tape.backward(sum(dense(a, b, c)));
  EXPECT_EQ(tape.grad(a).shape(), a.shape());
  EXPECT_EQ(tape.grad(b).shape(), b.shape());
  EXPECT_EQ(tape.grad(c).shape(), c.shape());
}

TEST(Tape, ConsumedByOneBackward) {
  Tape tape;
  Var x = tape.leaf(Tensor({2}, 1.0), true);
  Var l = sum(x);
  tape.backward(l);
  EXPECT_TRUE(tape.consumed());
  EXPECT_THROW(tape.backward(l), std::logic_error);
  EXPECT_THROW(sum(x), std::logic_error);
}

TEST(Tape, NonScalarLossRejected) {
  Tape tape;
  Var x = tape.leaf(Tensor({2}, 1.0), true);
  EXPECT_THROW(tape.backward(x), DimensionError);
}

TEST(Tape, NonFiniteForwardIsAnError) {
  Tape tape;
  Var x = tape.leaf(Tensor({2}, 1e308), true);
  EXPECT_THROW(scale(x, 10.0), NumericError);
}

TEST(Tape, NonFiniteGradientNamesTheNode) {
  Tape tape;
  Var x = tape.leaf(Tensor({1}, 1.0), true, "x");
  Var y = tape.record("blowup", x.value(), {x}, [](BackwardContext& ctx) {
    (*ctx.input_grad(0))[0] = std::numeric_limits<double>::infinity();
  });
  try {
    tape.backward(sum(y));
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("blowup"), std::string::npos);
  }
}

TEST(Tape, ConstantsGetNoGradient) {
  Tape tape;
  Var x = tape.leaf(Tensor({2}, 1.0), true);
  Var c = tape.constant(Tensor({2}, 3.0));
  tape.backward(sum(mul(x, c)));
  EXPECT_FALSE(c.requires_grad());
  for (double g : tape.grad(c).data()) EXPECT_EQ(g, 0.0);
  for (double g : tape.grad(x).data()) EXPECT_EQ(g, 3.0);
}

TEST(Tape, DeterministicForwardAndBackward) {
  auto run = [] {
    Tape tape;
    Var x = tape.leaf(random_tensor({1, 2, 4, 4, 4}, 11), true);
    Var k = tape.leaf(random_tensor({3, 2, 3, 3, 3}, 12), true);
    Var y = relu(conv3d(x, k, 1, 1));
    tape.backward(sum(mul(y, y)));
    return std::make_pair(y.value(), tape.grad(k));
  };
  const auto a = run();
  const auto b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(GradientCheck, SumIsExact) {
  const double err = gradient_check([](Var x) { return sum(x); }, random_tensor({4, 3}, 21));
  EXPECT_LE(err, 1e-10);
}

TEST(GradientCheck, SumOfSquares) {
  const double err = gradient_check([](Var x) { return sum(mul(x, x)); }, random_tensor({4, 3}, 22));
  EXPECT_LE(err, 1e-8);
}

TEST(GradientCheck, DetectsAWrongGradient) {
  // Backward deliberately off by a factor of two.
  auto wrong = [](Var x) {
    Tape& t = x.tape();
    Tensor v = Tensor::scalar(0.0);
    for (double e : x.value().data()) v[0] += e * e;
    Var y = t.record("wrong_square", v, {x}, [](BackwardContext& ctx) {
      Tensor* g = ctx.input_grad(0);
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += 4.0 * ctx.input(0)[i] * ctx.out_grad()[0];
    });
    return y;
  };
  EXPECT_GT(gradient_check(wrong, random_tensor({3}, 23, 0.5, 1.0)), 0.1);
}

}  // namespace
}  // namespace voxelstruct
