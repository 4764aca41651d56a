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
#include <memory>
#include <string>

#include "mcd/decoder.hpp"
#include "mcd/difference.hpp"
#include "mcd/encoder.hpp"
#include "mcd/kv.hpp"

namespace mcd {

struct ModelConfig {
  EncoderConfig encoder;
  int decoder_depth = 1;
  std::int64_t attention_reduction = 4;
  FusionVariant fusion = FusionVariant::kConcatenation;

  static ModelConfig desk();
  static ModelConfig reference();

  void validate() const;
  DecoderConfig decoder() const;
  DifferenceConfig difference(int stage) const;

  // Keys: c1, depths (comma list), d_state, expand, discretization,
  // decoder_depth, attention_reduction, fusion. Missing keys keep the
  // values already in `base`.
  static ModelConfig from_key_values(const KeyValues& kv, ModelConfig base = desk());
  void to_key_values(KeyValues& kv) const;
};

// Anything that maps an image pair [B,3,H,W] x2 to logits [B,2,H,W].
class ChangeDetector : public Module {
 public:
  virtual Tensor forward(const Tensor& pre, const Tensor& post) const = 0;
};

class MambaChangeDetector : public ChangeDetector {
 public:
  MambaChangeDetector(const ModelConfig& config, std::uint64_t seed);

  Tensor forward(const Tensor& pre, const Tensor& post) const override;
  // Fused per-scale maps ahead of the decoder.
  MultiScaleFeatures fuse(const Tensor& pre, const Tensor& post) const;
  void visit_parameters(const std::string& prefix, const ParameterVisitor& fn) override;

  const ModelConfig& config() const { return config_; }

  SiameseEncoder encoder;
  std::array<DifferenceModule, 4> difference;
  MaskDecoder decoder;

 private:
  ModelConfig config_;
};

}  // namespace mcd
