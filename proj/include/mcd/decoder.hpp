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
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mcd/binary_map.hpp"
#include "mcd/blocks.hpp"
#include "mcd/encoder.hpp"

namespace mcd {

struct DecoderConfig {
  // Per-level widths, shallowest first (C1, 2C1, 4C1, 8C1).
  std::array<std::int64_t, 4> channels = {16, 32, 64, 128};
  int depth = 1;  // CAVSS blocks per level
  std::int64_t d_state = 8;
  std::int64_t expand = 2;
  std::int64_t reduction = 4;
  Discretization mode = Discretization::kTaylor;
};

// UNet-style decoder. Deepest level first: CAVSS, bilinear x2, 1x1 channel
// reduction, add the next shallower fused map. The stride-4 result goes
// through a 1x1 classifier and one bilinear x4 resize.
class MaskDecoder : public Module {
 public:
  MaskDecoder() = default;
  MaskDecoder(const DecoderConfig& config, Rng& rng);

  // Fused maps [B, H_s, W_s, C_s] at strides 4..32 -> logits [B, 2, H, W].
  Tensor decode(const MultiScaleFeatures& fused) const;
  void visit_parameters(const std::string& prefix, const ParameterVisitor& fn) override;

  const DecoderConfig& config() const { return config_; }

  std::array<std::vector<CAVSSBlock>, 4> levels;
  std::array<Linear, 3> reduce;  // reduce[l-1]: C_l -> C_{l-1}
  Linear classifier;             // C1 -> 2

 private:
  DecoderConfig config_;
};

// Argmax over the class axis of [B, 2, H, W]; ties go to class 0.
BinaryMap predict_mask(const Tensor& logits);

}  // namespace mcd
