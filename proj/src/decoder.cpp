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
#include "mcd/decoder.hpp"

namespace mcd {

std::int64_t BinaryMap::count_ones() const {
  std::int64_t n = 0;
  for (auto v : values) n += v;
  return n;
}

BinaryMap BinaryMap::from_tensor(const Tensor& t) {
  if (t.dim() != 3) throw ShapeError("BinaryMap: expected [B,H,W], got " + shape_str(t.shape()));
  BinaryMap m(t.size(0), t.size(1), t.size(2));
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    const double v = t.at(i);
    if (v != 0.0 && v != 1.0) {
      throw NumericError("BinaryMap: value " + std::to_string(v) + " is not in {0,1}");
    }
    m.values[static_cast<std::size_t>(i)] = v == 1.0 ? 1 : 0;
  }
  return m;
}

Tensor BinaryMap::to_tensor(DType dtype) const {
  Tensor t = Tensor::zeros({batch, height, width}, dtype);
  for (std::int64_t i = 0; i < size(); ++i) {
    if (values[static_cast<std::size_t>(i)]) t.set(i, 1.0);
  }
  return t;
}

MaskDecoder::MaskDecoder(const DecoderConfig& config, Rng& rng) : config_(config) {
  if (config.depth < 1) throw Error("decoder: depth must be >= 1");
  for (std::size_t l = 0; l < 4; ++l) {
    const VSSConfig vss{.d_model = config.channels[l],
                        .d_state = config.d_state,
                        .expand = config.expand,
                        .mode = config.mode};
    for (int i = 0; i < config.depth; ++i) levels[l].emplace_back(vss, config.reduction, rng);
  }
  for (std::size_t l = 1; l < 4; ++l) {
    reduce[l - 1] = Linear(config.channels[l], config.channels[l - 1], false, rng);
  }
  classifier = Linear(config.channels[0], 2, true, rng);
}

Tensor MaskDecoder::decode(const MultiScaleFeatures& fused) const {
  for (std::size_t l = 0; l < 4; ++l) {
    const Tensor& f = fused[l];
    if (f.dim() != 4 || f.size(3) != config_.channels[l]) {
      throw ShapeError("decode: level " + std::to_string(l) + " expects " +
                       std::to_string(config_.channels[l]) + " channels, got " +
                       shape_str(f.shape()));
    }
    if (l > 0 && (f.size(1) * 2 != fused[l - 1].size(1) || f.size(2) * 2 != fused[l - 1].size(2) ||
                  f.size(0) != fused[l - 1].size(0))) {
      throw ShapeError("decode: level " + std::to_string(l) + " map " + shape_str(f.shape()) +
                       " is not half of " + shape_str(fused[l - 1].shape()));
    }
  }
  Tensor x = fused[3];
  for (std::size_t l = 3;; --l) {
    for (const auto& block : levels[l]) x = block.forward(x);
    if (l == 0) break;
    const Tensor up = permute(upsample_bilinear(permute(x, {0, 3, 1, 2}), 2), {0, 2, 3, 1});
    x = reduce[l - 1].forward(up) + fused[l - 1];
  }
  const Tensor logits_s4 = permute(classifier.forward(x), {0, 3, 1, 2});
  return upsample_bilinear(logits_s4, 4);
}

void MaskDecoder::visit_parameters(const std::string& prefix, const ParameterVisitor& fn) {
  for (std::size_t l = 0; l < 4; ++l) {
    const std::string level = join_name(prefix, "levels." + std::to_string(l));
    for (std::size_t i = 0; i < levels[l].size(); ++i) {
      levels[l][i].visit_parameters(join_name(level, "blocks." + std::to_string(i)), fn);
    }
    if (l > 0) reduce[l - 1].visit_parameters(join_name(level, "reduce"), fn);
  }
  classifier.visit_parameters(join_name(prefix, "classifier"), fn);
}

BinaryMap predict_mask(const Tensor& logits) {
  if (logits.dim() != 4 || logits.size(1) != 2) {
    throw ShapeError("predict_mask: expected [B,2,H,W], got " + shape_str(logits.shape()));
  }
  const std::int64_t b = logits.size(0), h = logits.size(2), w = logits.size(3);
  BinaryMap mask(b, h, w);
  const std::int64_t hw = h * w;
  for (std::int64_t n = 0; n < b; ++n) {
    for (std::int64_t i = 0; i < hw; ++i) {
      const double l0 = logits.at((n * 2) * hw + i);
      const double l1 = logits.at((n * 2 + 1) * hw + i);
      mask.values[static_cast<std::size_t>(n * hw + i)] = l1 > l0 ? 1 : 0;
    }
  }
  return mask;
}

}  // namespace mcd
