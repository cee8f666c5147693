/*
 * Copyright 2026 The FedMR Simulator Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "fedmr/tensor.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "fedmr/rng.hpp"

namespace fedmr {
namespace {

Tensor random_matrix(Rng& rng, std::size_t r, std::size_t c) {
  Tensor t = Tensor::zeros(r, c);
  for (auto& v : t.storage()) v = rng.normal();
  return t;
}

TEST(TensorTest, ShapeMustMatchData) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
  Tensor t({2, 3});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
}

TEST(KernelTest, SoftmaxOfZerosIsUniform) {
  Tensor y = kernel::softmax_rows(Tensor::zeros(1, 3));
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(KernelTest, ReluClampsNegatives) {
  Tensor y = kernel::relu(Tensor::row_vector({-1.0, 2.0}));
  EXPECT_EQ(y, Tensor::row_vector({0.0, 2.0}));
}

TEST(KernelTest, IdentityMatmul) {
  Rng rng(3);
  Tensor a = random_matrix(rng, 2, 5);
  EXPECT_EQ(kernel::matmul(Tensor::identity(2), a), a);
}

TEST(KernelTest, TransposedProductsAgreeWithNaiveLoops) {
  Rng rng(4);
  Tensor a = random_matrix(rng, 4, 3);
  Tensor b = random_matrix(rng, 4, 5);
  Tensor c = random_matrix(rng, 6, 3);
  Tensor tn = kernel::matmul_tn(a, b);
  Tensor nt = kernel::matmul_nt(a, c);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 4; ++k) s += a.at(k, i) * b.at(k, j);
      EXPECT_NEAR(tn.at(i, j), s, 1e-12);
    }
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 6; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 3; ++k) s += a.at(i, k) * c.at(j, k);
      EXPECT_NEAR(nt.at(i, j), s, 1e-12);
    }
}

TEST(KernelTest, ShapeErrorsNameTheOp) {
  try {
    kernel::matmul(Tensor::zeros(2, 3), Tensor::zeros(4, 2));
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("matmul"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[4x2]"), std::string::npos);
  }
  EXPECT_THROW(kernel::add_bias(Tensor::zeros(2, 3), Tensor::zeros(1, 2)),
               ShapeError);
  EXPECT_THROW(kernel::gather_rows(Tensor::zeros(2, 3),
                                   std::vector<std::size_t>{2}),
               ShapeError);
}

TEST(KernelTest, SoftmaxRowsAreOnTheSimplex) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_matrix(rng, 4, 7);
    for (auto& v : x.storage()) v *= 30.0;
    Tensor y = kernel::softmax_rows(x);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double s = 0;
      for (double v : y.row(r)) {
        EXPECT_GE(v, 0.0);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(KernelTest, BceWithLogitsIsStable) {
  EXPECT_NEAR(kernel::bce_with_logits(0.0, 1.0), std::log(2.0), 1e-15);
  EXPECT_LT(kernel::bce_with_logits(50.0, 1.0), 1e-20);
  EXPECT_NEAR(kernel::bce_with_logits(-800.0, 1.0), 800.0, 1e-9);
  EXPECT_TRUE(std::isfinite(kernel::bce_with_logits(800.0, 0.0)));
}

TEST(KernelTest, BitDeterministic) {
  Rng r1(9), r2(9);
  Tensor a1 = random_matrix(r1, 30, 20), b1 = random_matrix(r1, 20, 10);
  Tensor a2 = random_matrix(r2, 30, 20), b2 = random_matrix(r2, 20, 10);
  EXPECT_EQ(kernel::matmul(a1, b1), kernel::matmul(a2, b2));
}

TEST(RngTest, SampleWithoutReplacementIsDistinct) {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    auto v = rng.sample_without_replacement(20, 7);
    std::sort(v.begin(), v.end());
    EXPECT_EQ(std::adjacent_find(v.begin(), v.end()), v.end());
    EXPECT_LT(v.back(), 20u);
  }
  EXPECT_EQ(rng.sample_without_replacement(5, 5).size(), 5u);
}

TEST(RngTest, NamedStreamsAreReproducibleAndDistinct) {
  Rng a(7, "x", 1), b(7, "x", 1), c(7, "x", 2), d(7, "y", 1);
  const auto va = a.next_u64();
  EXPECT_EQ(va, b.next_u64());
  EXPECT_NE(va, c.next_u64());
  EXPECT_NE(va, d.next_u64());
}

TEST(RngTest, NormalMoments) {
  Rng rng(11);
  const int n = 200000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 4.0 / std::sqrt(n));
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

}  // namespace
}  // namespace fedmr
