/* Copyright 2026 The mcd Authors. All Rights Reserved.

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

#include "mcd/difference.hpp"
#include "test_util.hpp"

namespace mcd {
namespace {

using testing::max_abs_diff;
using testing::max_grad_error;
using testing::random_leaf;
using testing::random_tensor;

double total(const Tensor& t) {
  double s = 0;
  for (double v : t.values()) s += v;
  return s;
}

void zero_b_path(ScanProjection& proj, std::int64_t d_inner) {
  const std::int64_t cols = proj.x_proj.out_features();
  for (std::int64_t r = 0; r < d_inner; ++r)
    for (std::int64_t k = 0; k < proj.d_state; ++k)
      proj.x_proj.weight.set(r * cols + proj.dt_rank + k, 0);
}

TEST(JointScanTest, TotalIsSwapInvariant) {
  DTypeGuard guard(DType::kF64);
  Rng rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    SelectiveSSM ssm({.d_inner = 4, .d_state = 3}, rng);
    Tensor a = random_tensor({1, 7, 4}, rng);
    Tensor b = random_tensor({1, 7, 4}, rng);
    EXPECT_NEAR(total(joint_selective_scan(ssm, a, b)), total(joint_selective_scan(ssm, b, a)),
                1e-6);
  }
}

// With equal inputs both scans see the same sequence; the second result is
// realigned by swapping its halves before the add.
TEST(JointScanTest, EqualInputsAddASingleScanToItsHalfSwap) {
  DTypeGuard guard(DType::kF64);
  Rng rng(2);
  SelectiveSSM ssm({.d_inner = 4, .d_state = 3}, rng);
  Tensor a = random_tensor({1, 5, 4}, rng);
  const auto single = ssm.forward(concat({a, a}, 1)).values();
  const auto joint = joint_selective_scan(ssm, a, a).values();
  for (std::size_t t = 0; t < 10; ++t)
    for (std::size_t c = 0; c < 4; ++c)
      EXPECT_NEAR(joint[t * 4 + c], single[t * 4 + c] + single[((t + 5) % 10) * 4 + c], 1e-14);
}

TEST(JointScanTest, MemorylessSingleTokenByHand) {
  DTypeGuard guard(DType::kF64);
  Rng rng(3);
  SelectiveSSM ssm({.d_inner = 1, .d_state = 2}, rng);
  ssm.a_log.set(0, 40.0);  // exp(delta * A) underflows to exactly 0
  ssm.a_log.set(1, 40.0);
  const double xa = 0.7, xb = -0.4;
  // Token map of a memoryless scan: C(x) . (delta(x) B(x)) x + D x.
  auto token = [&](double x) {
    const auto& w = ssm.proj.x_proj.weight;  // [1, rank + 4]
    const double r = x * w.at(0);
    const double delta = std::log1p(std::exp(r * ssm.proj.dt_proj.weight.at(0) +
                                             ssm.proj.dt_proj.bias.at(0)));
    double cb = 0;
    for (int k = 0; k < 2; ++k) cb += (x * w.at(3 + k)) * delta * (x * w.at(1 + k));
    return cb * x + ssm.d_skip.at(0) * x;
  };
  Tensor y = joint_selective_scan(ssm, Tensor::from_values({1, 1, 1}, {xa}),
                                  Tensor::from_values({1, 1, 1}, {xb}));
  EXPECT_NEAR(y.at(0), 2 * token(xa), 1e-12);
  EXPECT_NEAR(y.at(1), 2 * token(xb), 1e-12);
}

TEST(JointScanTest, RejectsShapeMismatch) {
  Rng rng(4);
  SelectiveSSM ssm({.d_inner = 4, .d_state = 3}, rng);
  EXPECT_THROW(joint_selective_scan(ssm, Tensor::zeros({1, 5, 4}), Tensor::zeros({1, 6, 4})),
               ShapeError);
}

TEST(DifferenceModuleTest, ShapeContract) {
  Rng rng(5);
  DifferenceModule dm({.channels = 32, .out_channels = 32, .d_state = 4}, rng);
  Tensor y = dm.forward(random_tensor({1, 8, 8, 32}, rng), random_tensor({1, 8, 8, 32}, rng));
  EXPECT_EQ(y.shape(), (Shape{1, 8, 8, 32}));
  EXPECT_THROW(dm.forward(Tensor::zeros({1, 8, 8, 32}), Tensor::zeros({1, 8, 4, 32})),
               ShapeError);
  EXPECT_THROW(dm.forward(Tensor::zeros({1, 8, 8, 16}), Tensor::zeros({1, 8, 8, 16})),
               ShapeError);
}

TEST(DifferenceModuleTest, EqualInputsGiveEqualRefinedHalves) {
  DTypeGuard guard(DType::kF64);
  Rng rng(6);
  DifferenceModule dm({.channels = 4, .out_channels = 4, .d_state = 2}, rng);
  // With the fuse layer picking out one half at a time, both halves must agree.
  Tensor x = random_tensor({1, 3, 3, 4}, rng);
  auto half = [&](int which) {
    for (std::int64_t i = 0; i < dm.fuse.weight.numel(); ++i) {
      const std::int64_t row = i / 4, col = i % 4;
      dm.fuse.weight.set(i, row == which * 4 + col ? 1 : 0);
    }
    for (std::int64_t i = 0; i < 4; ++i) dm.fuse.bias.set(i, 0);
    return dm.forward(x, x).values();
  };
  EXPECT_LT(max_abs_diff(half(0), half(1)), 1e-14);
}

TEST(DifferenceModuleTest, ScanFreeReimplementationWhenInputPathIsCut) {
  DTypeGuard guard(DType::kF64);
  Rng rng(7);
  DifferenceModule dm({.channels = 4, .out_channels = 3, .d_state = 2}, rng);
  zero_b_path(dm.jss.proj, 4);
  for (std::int64_t i = 0; i < 4; ++i) dm.jss.d_skip.set(i, 1);
  Tensor pre = random_tensor({1, 3, 3, 4}, rng);
  Tensor post = random_tensor({1, 3, 3, 4}, rng);
  // No mixing: each branch is norm(2 * silu(dwconv(linear(x)))) + linear(x).
  auto branch = [&](const Tensor& x) {
    Tensor lin = dm.branch_proj.forward(x);
    Tensor s = silu(dm.dwconv.forward_nhwc(lin));
    return dm.norm.forward(scale(s, 2)) + lin;
  };
  Tensor expected = dm.fuse.forward(concat({branch(pre), branch(post)}, 3));
  EXPECT_LT(max_abs_diff(dm.forward(pre, post).values(), expected.values()), 1e-12);
}

TEST(DifferenceModuleTest, GradientsMatchFiniteDifferences) {
  DTypeGuard guard(DType::kF64);
  Rng rng(8);
  DifferenceModule dm({.channels = 3, .out_channels = 3, .d_state = 2}, rng);
  for (auto& [name, p] : dm.named_parameters())
    for (std::int64_t i = 0; i < p.numel(); ++i) p.set(i, p.at(i) + rng.uniform(-0.1, 0.1));
  Tensor pre = random_leaf({1, 4, 4, 3}, rng);
  Tensor post = random_leaf({1, 4, 4, 3}, rng);
  std::vector<Tensor> wrt{pre, post};
  for (auto& [name, p] : dm.named_parameters()) wrt.push_back(p);
  EXPECT_LT(max_grad_error([&] { return dm.forward(pre, post); }, wrt), 1e-3);
}

TEST(DifferenceVariantTest, EqualInputsFeedZeroIntoTail) {
  Rng rng(9);
  DifferenceModule dm({.channels = 4, .out_channels = 4, .variant = FusionVariant::kDifference},
                      rng);
  Tensor x = random_tensor({1, 2, 2, 4}, rng);
  Tensor y = dm.forward(x, x);
  for (std::int64_t i = 0; i < y.numel(); ++i) EXPECT_EQ(y.at(i), dm.fuse.bias.at(i % 4));
}

TEST(DifferenceVariantTest, IdentityTailGivesPreMinusPost) {
  Rng rng(10);
  DifferenceModule dm({.channels = 3, .out_channels = 3, .variant = FusionVariant::kDifference},
                      rng);
  for (std::int64_t i = 0; i < 9; ++i) dm.fuse.weight.set(i, i / 3 == i % 3 ? 1 : 0);
  for (std::int64_t i = 0; i < 3; ++i) dm.fuse.bias.set(i, 0);
  Tensor a = random_tensor({1, 2, 2, 3}, rng);
  Tensor b = random_tensor({1, 2, 2, 3}, rng);
  EXPECT_EQ(dm.forward(a, b).values(), sub(a, b).values());
}

TEST(DifferenceVariantTest, OnlyTailParametersAreExposed) {
  Rng rng(11);
  DifferenceModule dm({.channels = 4, .out_channels = 4, .variant = FusionVariant::kDifference},
                      rng);
  EXPECT_EQ(dm.parameter_count(), 4 * 4 + 4);
  EXPECT_EQ(parse_fusion("difference"), FusionVariant::kDifference);
  EXPECT_EQ(parse_fusion("concatenation"), FusionVariant::kConcatenation);
  EXPECT_THROW(parse_fusion("cross"), Error);
}

}  // namespace
}  // namespace mcd
