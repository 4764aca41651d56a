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

#include <cstdint>
#include <string>

#include "mcd/nn.hpp"
#include "mcd/ssm.hpp"

namespace mcd {

enum class FusionVariant {
  kConcatenation,  // joint selective scan over Pre;Post and Post;Pre
  kDifference,     // pre - post into the linear tail
};

const char* fusion_name(FusionVariant variant);
FusionVariant parse_fusion(const std::string& name);

// Scans the token-wise concatenations pre;post and post;pre with the same SSM
// and adds them after swapping the halves of the second result back, so slot
// i of the output always belongs to the same (branch, token).
// pre, post: [B, L, C] -> [B, 2L, C].
Tensor joint_selective_scan(const SelectiveSSM& ssm, const Tensor& pre, const Tensor& post);

struct DifferenceConfig {
  std::int64_t channels = 16;
  std::int64_t out_channels = 16;
  std::int64_t d_state = 8;
  Discretization mode = Discretization::kTaylor;
  FusionVariant variant = FusionVariant::kConcatenation;
};

// Fuses the pre/post features of one scale. The branch layers (linear,
// depthwise conv, norm) are shared by both images.
class DifferenceModule : public Module {
 public:
  DifferenceModule() = default;
  DifferenceModule(const DifferenceConfig& config, Rng& rng);

  // [B, H, W, C] x2 -> [B, H, W, C_out]
  Tensor forward(const Tensor& pre, const Tensor& post) const;
  void visit_parameters(const std::string& prefix, const ParameterVisitor& fn) override;

  const DifferenceConfig& config() const { return config_; }

  Linear branch_proj;
  Conv2d dwconv;
  SelectiveSSM jss;
  LayerNorm norm;
  Linear fuse;  // 2C -> C_out (concatenation) or C -> C_out (difference)

 private:
  DifferenceConfig config_;
};

}  // namespace mcd
