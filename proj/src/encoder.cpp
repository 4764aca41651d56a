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
#include "mcd/encoder.hpp"

namespace mcd {

EncoderConfig EncoderConfig::desk() { return EncoderConfig{}; }

EncoderConfig EncoderConfig::reference() {
  EncoderConfig c;
  c.c1 = 96;
  c.depths = {2, 2, 27, 2};
  c.d_state = 16;
  c.expand = 2;
  return c;
}

void EncoderConfig::validate() const {
  if (c1 < 1) throw Error("encoder: c1 must be >= 1");
  for (int d : depths) {
    if (d < 1) throw Error("encoder: every stage depth must be >= 1");
  }
  if (d_state < 1 || expand < 1) throw Error("encoder: d_state and expand must be >= 1");
}

VSSConfig EncoderConfig::block_config(int stage) const {
  return {.d_model = channels(stage), .d_state = d_state, .expand = expand, .mode = mode};
}

SiameseEncoder::SiameseEncoder(const EncoderConfig& config, Rng& rng) : config_(config) {
  config.validate();
  stem = Stem(config.c1, rng);
  for (int s = 0; s < 4; ++s) {
    if (s > 0) downsample[static_cast<std::size_t>(s - 1)] = Downsample(config.channels(s - 1), rng);
    auto& blocks = stages[static_cast<std::size_t>(s)];
    for (int i = 0; i < config.depths[static_cast<std::size_t>(s)]; ++i) {
      blocks.emplace_back(config.block_config(s), rng);
    }
  }
}

MultiScaleFeatures SiameseEncoder::encode(const Tensor& image) const {
  if (image.dim() != 4 || image.size(2) % 32 != 0 || image.size(3) % 32 != 0) {
    throw ShapeError("encode: image " + shape_str(image.shape()) +
                     " must be [B,3,H,W] with H and W divisible by 32");
  }
  MultiScaleFeatures out;
  Tensor x = stem.forward(image);
  for (std::size_t s = 0; s < 4; ++s) {
    if (s > 0) x = downsample[s - 1].forward(x);
    for (const auto& block : stages[s]) x = block.forward(x);
    out[s] = x;
  }
  return out;
}

std::pair<MultiScaleFeatures, MultiScaleFeatures> SiameseEncoder::encode_pair(
    const Tensor& pre, const Tensor& post) const {
  if (pre.shape() != post.shape()) {
    throw ShapeError("encode_pair: pre " + shape_str(pre.shape()) + " vs post " +
                     shape_str(post.shape()));
  }
  return {encode(pre), encode(post)};
}

void SiameseEncoder::visit_parameters(const std::string& prefix, const ParameterVisitor& fn) {
  stem.visit_parameters(join_name(prefix, "stem"), fn);
  for (std::size_t s = 0; s < 4; ++s) {
    const std::string stage = join_name(prefix, "stages." + std::to_string(s));
    if (s > 0) downsample[s - 1].visit_parameters(join_name(stage, "downsample"), fn);
    for (std::size_t i = 0; i < stages[s].size(); ++i) {
      stages[s][i].visit_parameters(join_name(stage, "blocks." + std::to_string(i)), fn);
    }
  }
}

}  // namespace mcd
