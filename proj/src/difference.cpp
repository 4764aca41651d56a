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
#include "mcd/difference.hpp"

namespace mcd {

const char* fusion_name(FusionVariant variant) {
  return variant == FusionVariant::kDifference ? "difference" : "concatenation";
}

FusionVariant parse_fusion(const std::string& name) {
  if (name == "concatenation" || name == "concat") return FusionVariant::kConcatenation;
  if (name == "difference" || name == "diff") return FusionVariant::kDifference;
  throw Error("unknown fusion variant '" + name + "' (expected concatenation or difference)");
}

Tensor joint_selective_scan(const SelectiveSSM& ssm, const Tensor& pre, const Tensor& post) {
  if (pre.shape() != post.shape() || pre.dim() != 3) {
    throw ShapeError("joint_selective_scan: pre " + shape_str(pre.shape()) + " vs post " +
                     shape_str(post.shape()));
  }
  const std::int64_t len = pre.size(1);
  const Tensor forward = ssm.forward(concat({pre, post}, 1));
  const Tensor swapped = ssm.forward(concat({post, pre}, 1));
  const Tensor realigned = concat({slice(swapped, 1, len, len), slice(swapped, 1, 0, len)}, 1);
  return forward + realigned;
}

DifferenceModule::DifferenceModule(const DifferenceConfig& config, Rng& rng) : config_(config) {
  const std::int64_t c = config.channels;
  // The branch layers are drawn for both variants so that everything built
  // after this module starts from the same weights.
  branch_proj = Linear(c, c, true, rng);
  dwconv = Conv2d(c, c, 3, {.stride = 1, .padding = 1, .groups = static_cast<int>(c)}, true, rng);
  for (std::int64_t i = 0; i < dwconv.bias.numel(); ++i) dwconv.bias.set(i, 0.0);
  jss = SelectiveSSM({.d_inner = c, .d_state = config.d_state, .dt_rank = 0, .mode = config.mode},
                     rng);
  norm = LayerNorm(c);
  const std::int64_t fused_in = config.variant == FusionVariant::kConcatenation ? 2 * c : c;
  fuse = Linear(fused_in, config.out_channels, true, rng);
}

Tensor DifferenceModule::forward(const Tensor& pre, const Tensor& post) const {
  if (pre.shape() != post.shape()) {
    throw ShapeError("DifferenceModule: pre " + shape_str(pre.shape()) + " vs post " +
                     shape_str(post.shape()));
  }
  if (pre.dim() != 4 || pre.size(3) != config_.channels) {
    throw ShapeError("DifferenceModule: expected [B,H,W," + std::to_string(config_.channels) +
                     "], got " + shape_str(pre.shape()));
  }
  if (config_.variant == FusionVariant::kDifference) return fuse.forward(pre - post);

  const Shape map_shape = pre.shape();
  const std::int64_t tokens = pre.size(1) * pre.size(2);
  const Tensor pre_lin = branch_proj.forward(pre);
  const Tensor post_lin = branch_proj.forward(post);
  const Tensor pre_seq = spatial_flatten(silu(dwconv.forward_nhwc(pre_lin)));
  const Tensor post_seq = spatial_flatten(silu(dwconv.forward_nhwc(post_lin)));
  auto halves = split(joint_selective_scan(jss, pre_seq, post_seq), 1, {tokens, tokens});
  // Residual from the features entering the convolution.
  const Tensor pre_ref = reshape(norm.forward(halves[0]), map_shape) + pre_lin;
  const Tensor post_ref = reshape(norm.forward(halves[1]), map_shape) + post_lin;
  return fuse.forward(concat({pre_ref, post_ref}, 3));
}

void DifferenceModule::visit_parameters(const std::string& prefix, const ParameterVisitor& fn) {
  if (config_.variant == FusionVariant::kConcatenation) {
    branch_proj.visit_parameters(join_name(prefix, "branch_proj"), fn);
    dwconv.visit_parameters(join_name(prefix, "dwconv"), fn);
    jss.visit_parameters(join_name(prefix, "jss"), fn);
    norm.visit_parameters(join_name(prefix, "norm"), fn);
  }
  fuse.visit_parameters(join_name(prefix, "fuse"), fn);
}

}  // namespace mcd
