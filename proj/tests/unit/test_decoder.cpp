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

#include "mcd/decoder.hpp"
#include "mcd/model.hpp"
#include "test_util.hpp"

namespace mcd {
namespace {

using testing::max_grad_error;
using testing::random_leaf;
using testing::random_tensor;

MultiScaleFeatures random_ladder(Rng& rng, std::int64_t batch, std::int64_t h, std::int64_t w,
                                 std::int64_t c1) {
  MultiScaleFeatures f;
  for (int s = 0; s < 4; ++s)
    f[s] = random_tensor({batch, h >> (s + 2), w >> (s + 2), c1 << s}, rng);
  return f;
}

TEST(DecoderTest, DeskLadderProducesFullResolutionLogits) {
  Rng rng(1);
  MaskDecoder dec(ModelConfig::desk().decoder(), rng);
  EXPECT_EQ(dec.decode(random_ladder(rng, 1, 64, 64, 16)).shape(), (Shape{1, 2, 64, 64}));
  EXPECT_EQ(dec.decode(random_ladder(rng, 2, 32, 96, 16)).shape(), (Shape{2, 2, 32, 96}));
}

TEST(DecoderTest, ZeroFeaturesGiveClassifierBias) {
  Rng rng(2);
  MaskDecoder dec(ModelConfig::desk().decoder(), rng);
  MultiScaleFeatures zero;
  for (int s = 0; s < 4; ++s) zero[s] = Tensor::zeros({1, 16 >> s, 16 >> s, 16 << s});
  Tensor logits = dec.decode(zero);
  const double b0 = dec.classifier.bias.at(0), b1 = dec.classifier.bias.at(1);
  for (std::int64_t i = 0; i < 64 * 64; ++i) {
    EXPECT_FLOAT_EQ(logits.at(i), b0);
    EXPECT_FLOAT_EQ(logits.at(64 * 64 + i), b1);
  }
}

TEST(DecoderTest, ZeroedSkipsStillDecode) {
  Rng rng(3);
  MaskDecoder dec(ModelConfig::desk().decoder(), rng);
  auto f = random_ladder(rng, 1, 64, 64, 16);
  for (int s = 0; s < 3; ++s) f[s] = Tensor::zeros(f[s].shape());
  EXPECT_EQ(dec.decode(f).shape(), (Shape{1, 2, 64, 64}));
}

TEST(DecoderTest, RejectsBrokenLadder) {
  Rng rng(4);
  MaskDecoder dec(ModelConfig::desk().decoder(), rng);
  auto f = random_ladder(rng, 1, 64, 64, 16);
  auto wrong_channels = f;
  wrong_channels[2] = Tensor::zeros({1, 4, 4, 32});
  EXPECT_THROW(dec.decode(wrong_channels), ShapeError);
  auto wrong_size = f;
  wrong_size[3] = Tensor::zeros({1, 3, 3, 128});
  EXPECT_THROW(dec.decode(wrong_size), ShapeError);
}

TEST(DecoderTest, GradientsMatchFiniteDifferences) {
  DTypeGuard guard(DType::kF64);
  Rng rng(5);
  DecoderConfig cfg{.channels = {4, 8, 16, 32}, .depth = 1, .d_state = 2, .expand = 1,
                    .reduction = 4};
  MaskDecoder dec(cfg, rng);
  for (auto& [name, p] : dec.named_parameters())
    for (std::int64_t i = 0; i < p.numel(); ++i) p.set(i, p.at(i) + rng.uniform(-0.1, 0.1));
  MultiScaleFeatures f;
  for (int s = 0; s < 4; ++s) f[s] = random_leaf({1, 8 >> s, 8 >> s, 4 << s}, rng);
  std::vector<Tensor> wrt(f.begin(), f.end());
  for (auto& [name, p] : dec.named_parameters()) wrt.push_back(p);
  EXPECT_LT(max_grad_error([&] { return dec.decode(f); }, wrt, 11, 1e-5), 1e-3);
}

TEST(PredictMaskTest, ArgmaxAndTieRule) {
  auto one_pixel = [](double l0, double l1) {
    return predict_mask(Tensor::from_values({1, 2, 1, 1}, {l0, l1})).values[0];
  };
  EXPECT_EQ(one_pixel(1, 0), 0);
  EXPECT_EQ(one_pixel(0, 1), 1);
  EXPECT_EQ(one_pixel(0.25, 0.25), 0);
}

TEST(PredictMaskTest, InvariantToCommonShift) {
  Rng rng(6);
  MaskDecoder dec(ModelConfig::desk().decoder(), rng);
  Tensor logits = dec.decode(random_ladder(rng, 1, 32, 32, 16));
  EXPECT_EQ(predict_mask(add_scalar(logits, 3.0)).values, predict_mask(logits).values);
}

TEST(PredictMaskTest, RejectsWrongClassAxis) {
  EXPECT_THROW(predict_mask(Tensor::zeros({1, 3, 2, 2})), ShapeError);
}

TEST(BinaryMapTest, TensorRoundTrip) {
  Tensor t = Tensor::from_values({1, 2, 2}, {0, 1, 1, 0});
  BinaryMap m = BinaryMap::from_tensor(t);
  EXPECT_EQ(m.count_ones(), 2);
  EXPECT_EQ(m.to_tensor().values(), t.values());
  EXPECT_THROW(BinaryMap::from_tensor(Tensor::from_values({1, 1, 1}, {0.5})), NumericError);
}

}  // namespace
}  // namespace mcd
