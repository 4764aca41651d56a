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
#include <utility>
#include <vector>

#include "mcd/blocks.hpp"

namespace mcd {

struct EncoderConfig {
  std::int64_t c1 = 16;
  std::array<int, 4> depths = {1, 1, 2, 1};
  std::int64_t d_state = 8;
  std::int64_t expand = 2;
  Discretization mode = Discretization::kTaylor;

  // Runs on a CPU in minutes.
  static EncoderConfig desk();
  // VMamba-Small widths and depths, used for parameter accounting.
  static EncoderConfig reference();

  void validate() const;
  std::int64_t channels(int stage) const { return c1 << stage; }
  VSSConfig block_config(int stage) const;
};

// Stage outputs at strides 4, 8, 16, 32 with C1, 2C1, 4C1, 8C1 channels,
// each [B, H_s, W_s, C_s].
using MultiScaleFeatures = std::array<Tensor, 4>;

class SiameseEncoder : public Module {
 public:
  SiameseEncoder() = default;
  SiameseEncoder(const EncoderConfig& config, Rng& rng);

  // img: [B, 3, H, W] with H, W divisible by 32.
  MultiScaleFeatures encode(const Tensor& image) const;
  // Both images go through the one parameter set.
  std::pair<MultiScaleFeatures, MultiScaleFeatures> encode_pair(const Tensor& pre,
                                                                const Tensor& post) const;
  void visit_parameters(const std::string& prefix, const ParameterVisitor& fn) override;

  const EncoderConfig& config() const { return config_; }

  Stem stem;
  std::array<Downsample, 3> downsample;  // before stages 2, 3, 4
  std::array<std::vector<VSSBlock>, 4> stages;

 private:
  EncoderConfig config_;
};

}  // namespace mcd
