// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>

#include "ctcmt/autodiff.hpp"
#include "ctcmt/tensor.hpp"
#include "test_util.hpp"

using namespace ctcmt;

TEST(Tensor, ShapeAndStorageInvariants) {
  TensorF t({2, 3}, 1.5f, true);
  EXPECT_EQ(t.size(), 6);
  EXPECT_EQ(t.grad_values().size(), 6u);
  EXPECT_THROW(Tensor<float>({2, 0}), std::invalid_argument);
  EXPECT_THROW(TensorF::from({2, 2}, {1.f, 2.f, 3.f}), std::invalid_argument);
  TensorF r = t.reshaped({3, 2});
  EXPECT_TRUE(r.same_storage(t));
  EXPECT_THROW(t.reshaped({4, 2}), std::invalid_argument);
}

TEST(Matmul, IdentityLeavesInputUnchanged) {
  std::mt19937_64 rng(7);
  TensorD a({3, 3});
  ctcmt::testing::fill_uniform(a, rng);
  TensorD eye({3, 3});
  for (int i = 0; i < 3; ++i) eye.data()[i * 3 + i] = 1.0;
  TensorD c = matmul(a, eye);
  for (int i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(c.data()[i], a.data()[i]);
}

TEST(Matmul, HandCheckedProduct) {
  TensorD a = TensorD::from({2, 2}, {1, 2, 3, 4});
  TensorD b = TensorD::from({2, 2}, {5, 6, 7, 8});
  TensorD c = matmul(a, b);
  EXPECT_DOUBLE_EQ(c.data()[0], 19);
  EXPECT_DOUBLE_EQ(c.data()[1], 22);
  EXPECT_DOUBLE_EQ(c.data()[2], 43);
  EXPECT_DOUBLE_EQ(c.data()[3], 50);
}

TEST(Matmul, ZeroProducesZeros) {
  std::mt19937_64 rng(11);
  TensorD z({2, 3});
  TensorD b({3, 4});
  ctcmt::testing::fill_uniform(b, rng);
  TensorD c = matmul(z, b);
  EXPECT_EQ(c.shape(), (Shape{2, 4}));
  for (int i = 0; i < 8; ++i) EXPECT_DOUBLE_EQ(c.data()[i], 0.0);
}

TEST(Matmul, ShapeMismatchThrows) {
  TensorD a({2, 3});
  TensorD b({4, 2});
  EXPECT_THROW(matmul(a, b), std::invalid_argument);
}

TEST(Softmax, SymmetricPair) {
  TensorD x = TensorD::from({2}, {0.0, 0.0});
  TensorD y = softmax(x);
  EXPECT_NEAR(y.data()[0], 0.5, 1e-12);
  EXPECT_NEAR(y.data()[1], 0.5, 1e-12);
}

TEST(Softmax, ClosedFormNormalization) {
  TensorD x = TensorD::from({2}, {std::log(2.0), 0.0});
  TensorD y = softmax(x);
  EXPECT_NEAR(y.data()[0], 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(y.data()[1], 1.0 / 3.0, 1e-12);
}

TEST(Softmax, ShiftInvarianceAndNormalization) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    TensorD x({4, 5});
    ctcmt::testing::fill_uniform(x, rng);
    TensorD shifted(x.shape());
    std::uniform_real_distribution<double> cd(-5.0, 5.0);
    const double c = cd(rng);
    for (std::int64_t i = 0; i < x.size(); ++i) shifted.data()[i] = x.data()[i] + c;
    TensorD y1 = softmax(x), y2 = softmax(shifted);
    for (std::int64_t i = 0; i < y1.size(); ++i) EXPECT_NEAR(y1.data()[i], y2.data()[i], 1e-12);
    for (int r = 0; r < 4; ++r) {
      double s = 0;
      for (int j = 0; j < 5; ++j) {
        s += y1.data()[r * 5 + j];
        EXPECT_GT(y1.data()[r * 5 + j], 0.0);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Softmax, ArbitraryAxis) {
  TensorD x = TensorD::from({2, 2}, {1.0, 5.0, 3.0, 5.0});
  TensorD y = softmax(x, 0);
  EXPECT_NEAR(y.data()[0] + y.data()[2], 1.0, 1e-12);
  EXPECT_NEAR(y.data()[1] + y.data()[3], 1.0, 1e-12);
  EXPECT_NEAR(y.data()[1], 0.5, 1e-12);
}

TEST(LayerNorm, ConstantVectorGoesToBias) {
  TensorD x = TensorD::from({1, 4}, {3.0, 3.0, 3.0, 3.0});
  TensorD g({4}, 1.0), b({4}, 0.0);
  TensorD y = layer_norm(x, g, b);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(y.data()[i], 0.0, 1e-9);
}

TEST(LayerNorm, HandComputedPair) {
  TensorD x = TensorD::from({1, 2}, {1.0, 3.0});
  TensorD g({2}, 1.0), b({2}, 0.0);
  TensorD y = layer_norm(x, g, b, 1e-12);
  EXPECT_NEAR(y.data()[0], -1.0, 1e-5);
  EXPECT_NEAR(y.data()[1], 1.0, 1e-5);
}

TEST(LayerNorm, NormalizationLaw) {
  std::mt19937_64 rng(5);
  TensorD x({8, 16});
  ctcmt::testing::fill_uniform(x, rng);
  TensorD g({16}, 1.7), b({16}, 0.3);
  TensorD y = layer_norm(x, g, b, 1e-12);
  for (int r = 0; r < 8; ++r) {
    double m = 0;
    for (int j = 0; j < 16; ++j) m += y.data()[r * 16 + j] / 16.0;
    double var = 0;
    for (int j = 0; j < 16; ++j) var += (y.data()[r * 16 + j] - m) * (y.data()[r * 16 + j] - m) / 16.0;
    EXPECT_NEAR(m, 0.3, 1e-5);
    EXPECT_NEAR(var, 1.7 * 1.7, 1e-5);
  }
}

TEST(Backward, SumGivesOnes) {
  TensorD x({2, 3}, 0.0, true);
  std::mt19937_64 rng(1);
  ctcmt::testing::fill_uniform(x, rng);
  Tape<double> tape;
  TensorD loss = sum(x, &tape);
  tape.backward(loss);
  for (int i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 1.0);
}

TEST(Backward, SumOfSquares) {
  TensorD x = TensorD::from({3}, {1.0, 2.0, 3.0}, true);
  Tape<double> tape;
  TensorD loss = sum(mul(x, x, &tape), &tape);
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
  EXPECT_DOUBLE_EQ(x.grad()[2], 6.0);
}

TEST(Backward, NonScalarLossRejected) {
  TensorD x({2, 2}, 1.0, true);
  Tape<double> tape;
  TensorD y = mul(x, x, &tape);
  EXPECT_THROW(tape.backward(y), std::invalid_argument);
}

TEST(Backward, NonParticipatingLeafKeepsZeroGrad) {
  TensorD x({2}, 1.0, true), unused({2}, 1.0, true);
  Tape<double> tape;
  TensorD loss = sum(mul(x, x, &tape), &tape);
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(unused.grad()[0], 0.0);
  EXPECT_DOUBLE_EQ(unused.grad()[1], 0.0);
}

TEST(Backward, CompositeGraphMatchesFiniteDifferences) {
  std::mt19937_64 rng(17);
  TensorD a({3, 4}, 0.0, true), b({4, 2}, 0.0, true), g({2}, 1.0, true), bias({2}, 0.0, true);
  ctcmt::testing::fill_uniform(a, rng);
  ctcmt::testing::fill_uniform(b, rng);
  auto forward = [&](Tape<double>* tape) {
    TensorD h = matmul(a, b, tape);
    TensorD n = layer_norm(h, g, bias, 1e-6, tape);
    TensorD s = softmax(n, -1, tape);
    return sum(mul(s, h, tape), tape);
  };
  const double err = ctcmt::testing::max_gradcheck_err(forward, {&a, &b, &g, &bias});
  EXPECT_LT(err, 1e-4);
}

TEST(Backward, LinearityOfLossSum) {
  std::mt19937_64 rng(23);
  TensorD x({4}, 0.0, true);
  ctcmt::testing::fill_uniform(x, rng);

  Tape<double> t1;
  TensorD l1 = sum(mul(x, x, &t1), &t1);
  t1.backward(l1);
  std::vector<double> g1(x.grad(), x.grad() + 4);

  x.zero_grad();
  Tape<double> t2;
  TensorD l2 = sum(relu(x, &t2), &t2);
  t2.backward(l2);
  std::vector<double> g2(x.grad(), x.grad() + 4);

  x.zero_grad();
  Tape<double> t3;
  TensorD both = add(mul(x, x, &t3), relu(x, &t3), &t3);
  TensorD l3 = sum(both, &t3);
  t3.backward(l3);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(x.grad()[i], g1[i] + g2[i], 1e-12);
}

TEST(Forward, DeterministicAcrossRuns) {
  auto run = [] {
    std::mt19937_64 rng(99);
    TensorF a({16, 16}), b({16, 16});
    std::uniform_real_distribution<float> d(-1.f, 1.f);
    for (auto& v : a.values()) v = d(rng);
    for (auto& v : b.values()) v = d(rng);
    TensorF c = matmul(a, b);
    TensorF s = softmax(c, -1);
    return std::vector<float>(s.data(), s.data() + s.size());
  };
  const auto r1 = run(), r2 = run();
  ASSERT_EQ(r1.size(), r2.size());
  for (std::size_t i = 0; i < r1.size(); ++i) {
    EXPECT_EQ(r1[i], r2[i]);  // bit-identical
  }
}
