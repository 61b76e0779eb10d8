#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <set>

#include "copt/ops.hpp"
#include "copt/rng.hpp"
#include "copt/tensor.hpp"

using namespace copt;

TEST(Tensor, ShapeAndFill) {
  Tensor t(Shape{2, 3}, 1.5f);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_EQ(t.numel(), 6u);
  for (float v : t.values()) EXPECT_EQ(v, 1.5f);
  EXPECT_EQ(shape_str(t.shape()), "[2,3]");
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
}

TEST(Tensor, ScalarItem) {
  EXPECT_EQ(Tensor::scalar(3.0f).item(), 3.0f);
  EXPECT_THROW(Tensor(Shape{2}, 0.0f).item(), ContractError);
}

TEST(Tensor, HandlesShareStorageClonesDoNot) {
  Tensor a(Shape{2}, 1.0f);
  Tensor b = a;
  b[0] = 5.0f;
  EXPECT_EQ(a[0], 5.0f);
  Tensor c = a.clone();
  c[1] = 7.0f;
  EXPECT_EQ(a[1], 1.0f);
}

TEST(Backward, SumGivesOnes) {
  Tensor x(Shape{3}, std::vector<float>{1, 2, 3});
  x.set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  backward(sum(x));
  ASSERT_TRUE(x.has_grad());
  for (float g : x.grad()) EXPECT_EQ(g, 1.0f);
}

TEST(Backward, SumOfSquares) {
  Tensor x(Shape{2}, std::vector<float>{1, 2});
  x.set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  backward(sum(mul(x, x)));
  EXPECT_EQ(x.grad()[0], 2.0f);
  EXPECT_EQ(x.grad()[1], 4.0f);
}

TEST(Backward, ReuseAccumulates) {
  Tensor x(Shape{2}, std::vector<float>{1, -1});
  x.set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  // x used in two branches: d/dx (sum(x) + sum(3x)) = 4
  backward(add(sum(x), sum(scale(x, 3.0f))));
  EXPECT_EQ(x.grad()[0], 4.0f);
  EXPECT_EQ(x.grad()[1], 4.0f);
}

TEST(Backward, RepeatedBackwardAccumulatesIntoLeaves) {
  Tensor x(Shape{1}, 2.0f);
  x.set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  backward(sum(x));
  backward(sum(scale(x, 2.0f)));
  EXPECT_EQ(x.grad()[0], 3.0f);
}

TEST(Backward, NonScalarLossIsContractError) {
  Tensor x(Shape{2}, 1.0f);
  x.set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  EXPECT_THROW(backward(scale(x, 2.0f)), ContractError);
}

TEST(Backward, NoTapeMeansNoRecording) {
  Tensor x(Shape{2}, 1.0f);
  x.set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  {
    NoGradGuard guard;
    auto y = sum(x);
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_EQ(tape.size(), 0u);
  auto y = sum(x);
  EXPECT_TRUE(y.requires_grad());
  EXPECT_EQ(tape.size(), 1u);
}

TEST(Backward, NonFiniteOpOutputRaises) {
  Tensor big(Shape{1}, std::numeric_limits<float>::max());
  EXPECT_THROW(mul(big, big), NumericError);
}

TEST(Rng, FnvKnownValues) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ULL);
}

TEST(Rng, StreamsAreReplayableAndDistinct) {
  auto a = CounterRng::stream(7, 3, "mask");
  auto b = CounterRng::stream(7, 3, "mask");
  auto c = CounterRng::stream(7, 4, "mask");
  auto d = CounterRng::stream(7, 3, "augment");
  for (int i = 0; i < 16; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  EXPECT_NE(CounterRng::stream(7, 3, "mask").next_u64(), c.next_u64());
  EXPECT_NE(CounterRng::stream(7, 3, "mask").next_u64(), d.next_u64());
}

TEST(Rng, UniformMomentsAndBelowRange) {
  CounterRng r(42);
  const int n = 200000;
  double s = 0, s2 = 0;
  std::vector<int> hist(7, 0);
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    s += u;
    s2 += u * u;
    ++hist[r.below(7)];
  }
  EXPECT_NEAR(s / n, 0.5, 0.005);
  EXPECT_NEAR(s2 / n - (s / n) * (s / n), 1.0 / 12.0, 0.002);
  for (int h : hist) EXPECT_NEAR(h / double(n), 1.0 / 7.0, 0.005);
}

TEST(Rng, NormalMoments) {
  CounterRng r(9);
  const int n = 200000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.015);
}
