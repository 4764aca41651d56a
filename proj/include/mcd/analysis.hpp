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

#include "mcd/model.hpp"

namespace mcd {

// Row-major [height, width] map.
struct Heatmap {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<double> values;

  double max() const;
  // Pixels strictly above threshold.
  std::int64_t support(double threshold) const;
};

struct ErfMaps {
  Heatmap pre;   // w.r.t. the first image
  Heatmap post;  // w.r.t. the second image
};

// Input-gradient footprint of the "change" logit at pixel (H/2, W/2):
// |d logit / d pixel| summed over RGB, averaged over the batch, then both
// maps scaled by their own maximum so it becomes 1 (all-zero maps stay zero).
// Parameter gradients touched on the way are cleared again.
ErfMaps effective_receptive_field(ChangeDetector& model, const Tensor& pre, const Tensor& post);

// 8-bit grayscale <prefix>.png plus <prefix>.txt with one row of values per line.
void write_heatmap(const std::string& prefix, const Heatmap& map);

// 3x3 convolution over the channel-stacked pair, straight to logits.
class SingleConvDetector : public ChangeDetector {
 public:
  explicit SingleConvDetector(std::uint64_t seed);
  Tensor forward(const Tensor& pre, const Tensor& post) const override;
  void visit_parameters(const std::string& prefix, const ParameterVisitor& fn) override;

  Conv2d conv;
};

// The change detector with every selective scan swapped for a depthwise 3x3
// convolution and the joint scan fusion swapped for channel concatenation
// plus a linear layer. Same stem, stages, block counts and decoder ladder.
class ConvChangeDetector : public ChangeDetector {
 public:
  ConvChangeDetector(const ModelConfig& config, std::uint64_t seed);
  Tensor forward(const Tensor& pre, const Tensor& post) const override;
  void visit_parameters(const std::string& prefix, const ParameterVisitor& fn) override;

  class Block : public Module {
   public:
    Block() = default;
    Block(std::int64_t channels, std::int64_t expand, Rng& rng);
    Tensor forward(const Tensor& x) const;
    void visit_parameters(const std::string& prefix, const ParameterVisitor& fn) override;

    LayerNorm norm;
    Linear in_proj;
    Conv2d dwconv;
    Conv2d mixer;
    LayerNorm out_norm;
    Linear out_proj;
  };

 private:
  ModelConfig config_;
  Stem stem_;
  std::array<Downsample, 3> downsample_;
  std::array<std::vector<Block>, 4> stages_;
  std::array<Linear, 4> fuse_;
  std::array<std::vector<Block>, 4> decoder_;
  std::array<Linear, 3> reduce_;
  Linear classifier_;
};

std::int64_t count_parameters(Module& module);

// Multiply-accumulates count as 2 FLOPs. Norms, activations and resizes are
// counted at a few FLOPs per element; the scan at 9 per (token, channel,
// state) plus the skip term.
struct FlopBreakdown {
  double encoder = 0;     // both images
  double difference = 0;  // all four scales
  double decoder = 0;
  double total() const { return encoder + difference + decoder; }
};
FlopBreakdown estimate_flops(const ModelConfig& config, std::int64_t height, std::int64_t width);

struct ParameterBreakdown {
  std::int64_t encoder = 0;
  std::int64_t difference = 0;
  std::int64_t decoder = 0;
  std::int64_t total() const { return encoder + difference + decoder; }
};
ParameterBreakdown count_parameters(MambaChangeDetector& model);

// Parameter and FLOP report for a config at the given input size.
std::string accounting_report(const ModelConfig& config, std::int64_t height, std::int64_t width);

}  // namespace mcd
