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

struct VSSConfig {
  std::int64_t d_model = 16;
  std::int64_t d_state = 8;
  std::int64_t expand = 2;
  Discretization mode = Discretization::kTaylor;

  std::int64_t d_inner() const { return expand * d_model; }
};

// Visual state space block on [B, H, W, C] maps:
//
//   x ─ LN ─ in_proj ─┬─ dwconv3x3 ─ SiLU ─ SS2D ─ LN ─┐
//                     └──────────── SiLU ─────────────(×)─ out_proj ─ (+x)
//
// The split of in_proj into a scan path and a gate path follows the VMamba
// ordering.
class VSSBlock : public Module {
 public:
  VSSBlock() = default;
  VSSBlock(const VSSConfig& config, Rng& rng);

  // Everything but the residual add.
  Tensor branch(const Tensor& x) const;
  Tensor forward(const Tensor& x) const;
  void visit_parameters(const std::string& prefix, const ParameterVisitor& fn) override;

  const VSSConfig& config() const { return config_; }

  LayerNorm norm;
  Linear in_proj;
  Conv2d dwconv;
  SS2D ss2d;
  LayerNorm out_norm;
  Linear out_proj;

 private:
  VSSConfig config_;
};

// VSS block whose branch is rescaled per channel by a CBAM-style attention
// computed from spatially average- and max-pooled channel statistics.
class CAVSSBlock : public Module {
 public:
  CAVSSBlock() = default;
  CAVSSBlock(const VSSConfig& config, std::int64_t reduction, Rng& rng);

  // [B, H, W, C] -> [B, 1, 1, C] weights in (0, 1).
  Tensor channel_attention(const Tensor& v) const;
  Tensor forward(const Tensor& x) const;
  void visit_parameters(const std::string& prefix, const ParameterVisitor& fn) override;

  VSSBlock vss;
  Linear fc1;  // C -> C / reduction
  Linear fc2;  // C / reduction -> C
};

// Two stride-2 3x3 convolutions: [B, 3, H, W] -> [B, H/4, W/4, C1].
class Stem : public Module {
 public:
  Stem() = default;
  Stem(std::int64_t out_channels, Rng& rng);

  Tensor forward(const Tensor& image) const;
  void visit_parameters(const std::string& prefix, const ParameterVisitor& fn) override;

  Conv2d conv1;
  Conv2d conv2;
  LayerNorm norm;
};

// Gathers each 2x2 block of [B, H, W, C] into [B, H/2, W/2, 4C]. Channel
// groups are ordered (0,0), (0,1), (1,0), (1,1) by (row, column) offset.
Tensor patch_merge(const Tensor& x);

// Patch merge, layernorm, then a 4C -> 2C linear.
class Downsample : public Module {
 public:
  Downsample() = default;
  Downsample(std::int64_t channels, Rng& rng);

  Tensor forward(const Tensor& x) const;
  void visit_parameters(const std::string& prefix, const ParameterVisitor& fn) override;

  LayerNorm norm;
  Linear reduction;
};

}  // namespace mcd
