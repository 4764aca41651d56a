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

#include "mcd/blocks.hpp"
#include "test_util.hpp"

namespace mcd {
namespace {

using testing::max_abs_diff;
using testing::max_grad_error;
using testing::random_leaf;
using testing::random_tensor;

void fill(Tensor& t, double v) {
  for (std::int64_t i = 0; i < t.numel(); ++i) t.set(i, v);
}

TEST(VSSBlockTest, ZeroOutputProjectionIsIdentity) {
  Rng rng(1);
  VSSBlock block({.d_model = 8, .d_state = 4}, rng);
  fill(block.out_proj.weight, 0);
  Tensor zero = Tensor::zeros({1, 4, 4, 8});
  EXPECT_EQ(block.forward(zero).values(), zero.values());
  Tensor x = random_tensor({2, 4, 4, 8}, rng);
  EXPECT_EQ(block.forward(x).values(), x.values());
}

TEST(VSSBlockTest, PreservesShape) {
  Rng rng(2);
  VSSBlock block({.d_model = 16, .d_state = 4}, rng);
  EXPECT_EQ(block.forward(random_tensor({2, 8, 8, 16}, rng)).shape(), (Shape{2, 8, 8, 16}));
}

TEST(VSSBlockTest, RejectsChannelMismatch) {
  Rng rng(3);
  VSSBlock block({.d_model = 8, .d_state = 4}, rng);
  EXPECT_THROW(block.forward(Tensor::zeros({1, 4, 4, 6})), ShapeError);
}

TEST(VSSBlockTest, ParameterGradientsMatchFiniteDifferences) {
  DTypeGuard guard(DType::kF64);
  Rng rng(4);
  VSSBlock block({.d_model = 4, .d_state = 2, .expand = 2}, rng);
  // Move every parameter off its structured init so no gradient vanishes.
  for (auto& [name, p] : block.named_parameters())
    for (std::int64_t i = 0; i < p.numel(); ++i) p.set(i, p.at(i) + rng.uniform(-0.1, 0.1));
  Tensor x = random_leaf({1, 3, 3, 4}, rng);
  std::vector<Tensor> wrt{x};
  for (auto& [name, p] : block.named_parameters()) wrt.push_back(p);
  EXPECT_LT(max_grad_error([&] { return block.forward(x); }, wrt), 1e-3);
}

TEST(CAVSSBlockTest, ZeroBottleneckHalvesBranch) {
  DTypeGuard guard(DType::kF64);
  Rng rng(5);
  CAVSSBlock block({.d_model = 8, .d_state = 4}, 4, rng);
  fill(block.fc1.weight, 0);
  Tensor x = random_tensor({1, 4, 4, 8}, rng);
  const auto att = block.channel_attention(block.vss.branch(x)).values();
  for (double v : att) EXPECT_EQ(v, 0.5);
  std::vector<double> expected = x.values();
  const auto branch = block.vss.branch(x).values();
  for (std::size_t i = 0; i < expected.size(); ++i) expected[i] += 0.5 * branch[i];
  EXPECT_LT(max_abs_diff(block.forward(x).values(), expected), 1e-14);
}

TEST(CAVSSBlockTest, ConstantMapPoolsIdentically) {
  DTypeGuard guard(DType::kF64);
  Rng rng(6);
  CAVSSBlock block({.d_model = 4, .d_state = 2}, 2, rng);
  std::vector<double> v;
  for (int p = 0; p < 9; ++p)
    for (int c = 0; c < 4; ++c) v.push_back(0.3 * c - 0.4);
  Tensor map = Tensor::from_values({1, 3, 3, 4}, v);
  Tensor tokens = spatial_flatten(map);
  const auto avg = mean_axis(tokens, 1).values(), peak = max_axis(tokens, 1).values();
  for (std::size_t c = 0; c < avg.size(); ++c) EXPECT_NEAR(avg[c], peak[c], 1e-15);
}

TEST(CAVSSBlockTest, AttentionStrictlyInsideUnitIntervalAndChangesOutput) {
  Rng rng(7);
  CAVSSBlock block({.d_model = 8, .d_state = 4}, 4, rng);
  Tensor x = random_tensor({2, 4, 4, 8}, rng, -2, 2);
  for (double w : block.channel_attention(block.vss.branch(x)).values()) {
    EXPECT_GT(w, 0.0);
    EXPECT_LT(w, 1.0);
  }
  EXPECT_NE(block.forward(x).values(), block.vss.forward(x).values());
  EXPECT_EQ(block.forward(x).shape(), x.shape());
}

TEST(CAVSSBlockTest, ZeroedBranchIsIdentity) {
  Rng rng(8);
  CAVSSBlock block({.d_model = 8, .d_state = 4}, 4, rng);
  fill(block.vss.out_proj.weight, 0);
  Tensor x = random_tensor({1, 4, 4, 8}, rng);
  EXPECT_EQ(block.forward(x).values(), x.values());
}

TEST(CAVSSBlockTest, ParameterGradientsMatchFiniteDifferences) {
  DTypeGuard guard(DType::kF64);
  Rng rng(9);
  CAVSSBlock block({.d_model = 4, .d_state = 2}, 2, rng);
  for (auto& [name, p] : block.named_parameters())
    for (std::int64_t i = 0; i < p.numel(); ++i) p.set(i, p.at(i) + rng.uniform(-0.1, 0.1));
  Tensor x = random_leaf({1, 3, 3, 4}, rng);
  std::vector<Tensor> wrt{x};
  for (auto& [name, p] : block.named_parameters()) wrt.push_back(p);
  EXPECT_LT(max_grad_error([&] { return block.forward(x); }, wrt), 1e-3);
}

TEST(StemTest, ReducesFourfold) {
  Rng rng(10);
  Stem stem(16, rng);
  EXPECT_EQ(stem.forward(Tensor::zeros({1, 3, 256, 256})).shape(), (Shape{1, 64, 64, 16}));
  EXPECT_THROW(stem.forward(Tensor::zeros({1, 3, 30, 32})), ShapeError);
  EXPECT_THROW(stem.forward(Tensor::zeros({1, 4, 32, 32})), ShapeError);
}

TEST(DownsampleTest, HalvesSpaceDoublesChannels) {
  Rng rng(11);
  Downsample down(8, rng);
  EXPECT_EQ(down.forward(Tensor::zeros({1, 64, 64, 8})).shape(), (Shape{1, 32, 32, 16}));
  EXPECT_THROW(down.forward(Tensor::zeros({1, 5, 4, 8})), ShapeError);
}

TEST(DownsampleTest, PatchMergeOfConstantMapRepeatsIt) {
  std::vector<double> v;
  for (int p = 0; p < 16; ++p)
    for (int c = 0; c < 3; ++c) v.push_back(c + 1);
  Tensor merged = patch_merge(Tensor::from_values({1, 4, 4, 3}, v));
  EXPECT_EQ(merged.shape(), (Shape{1, 2, 2, 12}));
  for (std::int64_t i = 0; i < merged.numel(); ++i) EXPECT_EQ(merged.at(i), i % 3 + 1);
  // Identity reduction maps the merged vector through unchanged.
  Rng rng(12);
  Linear id(12, 12, false, rng);
  for (std::int64_t i = 0; i < 144; ++i) id.weight.set(i, i / 12 == i % 12 ? 1 : 0);
  EXPECT_EQ(id.forward(merged).values(), merged.values());
}

TEST(DownsampleTest, PatchMergeGathersEachBlock) {
  std::vector<double> v(16);
  for (int i = 0; i < 16; ++i) v[i] = i;
  Tensor merged = patch_merge(Tensor::from_values({1, 4, 4, 1}, v));
  // Block (0, 1) holds pixels (0,2), (0,3), (1,2), (1,3).
  EXPECT_EQ(slice(merged, 2, 1, 1).values(), (std::vector<double>{2, 3, 6, 7, 10, 11, 14, 15}));
}

}  // namespace
}  // namespace mcd
