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
#include "mcd/blocks.hpp"

#include <algorithm>

namespace mcd {
namespace {

void require_channels(const Tensor& x, std::int64_t channels, const char* who) {
  if (x.dim() != 4 || x.size(3) != channels) {
    throw ShapeError(std::string(who) + ": expected [B,H,W," + std::to_string(channels) +
                     "], got " + shape_str(x.shape()));
  }
}

}  // namespace

VSSBlock::VSSBlock(const VSSConfig& config, Rng& rng) : config_(config) {
  const std::int64_t c = config.d_model;
  const std::int64_t di = config.d_inner();
  norm = LayerNorm(c);
  in_proj = Linear(c, 2 * di, false, rng);
  dwconv = Conv2d(di, di, 3, {.stride = 1, .padding = 1, .groups = static_cast<int>(di)}, true,
                  rng);
  for (std::int64_t i = 0; i < dwconv.bias.numel(); ++i) dwconv.bias.set(i, 0.0);
  ss2d = SS2D({.d_inner = di, .d_state = config.d_state, .dt_rank = 0, .mode = config.mode}, rng);
  out_norm = LayerNorm(di);
  out_proj = Linear(di, c, false, rng);
}

Tensor VSSBlock::branch(const Tensor& x) const {
  require_channels(x, config_.d_model, "VSSBlock");
  const std::int64_t di = config_.d_inner();
  auto parts = split(in_proj.forward(norm.forward(x)), -1, {di, di});
  const Tensor scanned = ss2d.forward(silu(dwconv.forward_nhwc(parts[0])));
  return out_proj.forward(out_norm.forward(scanned) * silu(parts[1]));
}

Tensor VSSBlock::forward(const Tensor& x) const { return x + branch(x); }

void VSSBlock::visit_parameters(const std::string& prefix, const ParameterVisitor& fn) {
  norm.visit_parameters(join_name(prefix, "norm"), fn);
  in_proj.visit_parameters(join_name(prefix, "in_proj"), fn);
  dwconv.visit_parameters(join_name(prefix, "dwconv"), fn);
  ss2d.visit_parameters(join_name(prefix, "ss2d"), fn);
  out_norm.visit_parameters(join_name(prefix, "out_norm"), fn);
  out_proj.visit_parameters(join_name(prefix, "out_proj"), fn);
}

CAVSSBlock::CAVSSBlock(const VSSConfig& config, std::int64_t reduction, Rng& rng)
    : vss(config, rng) {
  const std::int64_t hidden = std::max<std::int64_t>(1, config.d_model / reduction);
  fc1 = Linear(config.d_model, hidden, false, rng);
  fc2 = Linear(hidden, config.d_model, false, rng);
}

Tensor CAVSSBlock::channel_attention(const Tensor& v) const {
  const Tensor tokens = spatial_flatten(v);
  const Tensor avg = mean_axis(tokens, 1, true);  // [B, 1, C]
  const Tensor mx = max_axis(tokens, 1, true);
  auto mlp = [this](const Tensor& s) { return fc2.forward(relu(fc1.forward(s))); };
  const Tensor w = sigmoid(mlp(avg) + mlp(mx));
  return reshape(w, {v.size(0), 1, 1, v.size(3)});
}

Tensor CAVSSBlock::forward(const Tensor& x) const {
  const Tensor v = vss.branch(x);
  return x + v * channel_attention(v);
}

void CAVSSBlock::visit_parameters(const std::string& prefix, const ParameterVisitor& fn) {
  vss.visit_parameters(join_name(prefix, "vss"), fn);
  fc1.visit_parameters(join_name(prefix, "att_fc1"), fn);
  fc2.visit_parameters(join_name(prefix, "att_fc2"), fn);
}

Stem::Stem(std::int64_t out_channels, Rng& rng) {
  const std::int64_t mid = std::max<std::int64_t>(1, out_channels / 2);
  conv1 = Conv2d(3, mid, 3, {.stride = 2, .padding = 1, .groups = 1}, true, rng);
  conv2 = Conv2d(mid, out_channels, 3, {.stride = 2, .padding = 1, .groups = 1}, true, rng);
  norm = LayerNorm(out_channels);
}

Tensor Stem::forward(const Tensor& image) const {
  if (image.dim() != 4 || image.size(1) != 3) {
    throw ShapeError("Stem: expected [B,3,H,W], got " + shape_str(image.shape()));
  }
  if (image.size(2) % 4 != 0 || image.size(3) % 4 != 0) {
    throw ShapeError("Stem: spatial size " + std::to_string(image.size(2)) + "x" +
                     std::to_string(image.size(3)) + " is not divisible by 4");
  }
  const Tensor h = conv2.forward(silu(conv1.forward(image)));
  return norm.forward(permute(h, {0, 2, 3, 1}));
}

void Stem::visit_parameters(const std::string& prefix, const ParameterVisitor& fn) {
  conv1.visit_parameters(join_name(prefix, "conv1"), fn);
  conv2.visit_parameters(join_name(prefix, "conv2"), fn);
  norm.visit_parameters(join_name(prefix, "norm"), fn);
}

Tensor patch_merge(const Tensor& x) {
  if (x.dim() != 4) throw ShapeError("patch_merge: expected [B,H,W,C]");
  const std::int64_t b = x.size(0), h = x.size(1), w = x.size(2), c = x.size(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("patch_merge: spatial size " + std::to_string(h) + "x" +
                     std::to_string(w) + " is not divisible by 2");
  }
  const Tensor blocks = reshape(x, {b, h / 2, 2, w / 2, 2, c});
  return reshape(permute(blocks, {0, 1, 3, 2, 4, 5}), {b, h / 2, w / 2, 4 * c});
}

Downsample::Downsample(std::int64_t channels, Rng& rng)
    : norm(4 * channels), reduction(4 * channels, 2 * channels, false, rng) {}

Tensor Downsample::forward(const Tensor& x) const {
  return reduction.forward(norm.forward(patch_merge(x)));
}

void Downsample::visit_parameters(const std::string& prefix, const ParameterVisitor& fn) {
  norm.visit_parameters(join_name(prefix, "norm"), fn);
  reduction.visit_parameters(join_name(prefix, "reduction"), fn);
}

}  // namespace mcd
