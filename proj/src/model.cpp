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
#include "mcd/model.hpp"

#include <sstream>

namespace mcd {
namespace {

std::string join_depths(const std::array<int, 4>& d) {
  std::string s;
  for (std::size_t i = 0; i < d.size(); ++i) s += (i ? "," : "") + std::to_string(d[i]);
  return s;
}

std::array<int, 4> parse_depths(const std::string& text) {
  std::array<int, 4> d{};
  std::istringstream in(text);
  std::string item;
  std::size_t n = 0;
  while (std::getline(in, item, ',')) {
    if (n == 4) break;
    try {
      std::size_t used = 0;
      d[n] = std::stoi(item, &used);
      if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error("config key `depths`: `" + text + "` is not a list of four integers");
    }
    ++n;
  }
  if (n != 4 || std::getline(in, item, ',')) {
    throw Error("config key `depths`: `" + text + "` is not a list of four integers");
  }
  return d;
}

}  // namespace

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::reference() {
  ModelConfig c;
  c.encoder = EncoderConfig::reference();
  return c;
}

void ModelConfig::validate() const {
  encoder.validate();
  if (decoder_depth < 1) throw Error("decoder_depth must be >= 1");
  if (attention_reduction < 1) throw Error("attention_reduction must be >= 1");
}

DecoderConfig ModelConfig::decoder() const {
  DecoderConfig d;
  for (int s = 0; s < 4; ++s) d.channels[static_cast<std::size_t>(s)] = encoder.channels(s);
  d.depth = decoder_depth;
  d.d_state = encoder.d_state;
  d.expand = encoder.expand;
  d.reduction = attention_reduction;
  d.mode = encoder.mode;
  return d;
}

DifferenceConfig ModelConfig::difference(int stage) const {
  return DifferenceConfig{.channels = encoder.channels(stage),
                          .out_channels = encoder.channels(stage),
                          .d_state = encoder.d_state,
                          .mode = encoder.mode,
                          .variant = fusion};
}

ModelConfig ModelConfig::from_key_values(const KeyValues& kv, ModelConfig base) {
  ModelConfig c = base;
  c.encoder.c1 = kv_int(kv, "c1", c.encoder.c1);
  if (kv.count("depths")) c.encoder.depths = parse_depths(kv.at("depths"));
  c.encoder.d_state = kv_int(kv, "d_state", c.encoder.d_state);
  c.encoder.expand = kv_int(kv, "expand", c.encoder.expand);
  if (kv.count("discretization")) c.encoder.mode = parse_discretization(kv.at("discretization"));
  c.decoder_depth = static_cast<int>(kv_int(kv, "decoder_depth", c.decoder_depth));
  c.attention_reduction = kv_int(kv, "attention_reduction", c.attention_reduction);
  if (kv.count("fusion")) c.fusion = parse_fusion(kv.at("fusion"));
  c.validate();
  return c;
}

void ModelConfig::to_key_values(KeyValues& kv) const {
  kv["c1"] = std::to_string(encoder.c1);
  kv["depths"] = join_depths(encoder.depths);
  kv["d_state"] = std::to_string(encoder.d_state);
  kv["expand"] = std::to_string(encoder.expand);
  kv["discretization"] = discretization_name(encoder.mode);
  kv["decoder_depth"] = std::to_string(decoder_depth);
  kv["attention_reduction"] = std::to_string(attention_reduction);
  kv["fusion"] = fusion_name(fusion);
}

MambaChangeDetector::MambaChangeDetector(const ModelConfig& config, std::uint64_t seed)
    : config_(config) {
  config.validate();
  Rng rng(seed);
  encoder = SiameseEncoder(config.encoder, rng);
  for (int s = 0; s < 4; ++s) {
    difference[static_cast<std::size_t>(s)] = DifferenceModule(config.difference(s), rng);
  }
  decoder = MaskDecoder(config.decoder(), rng);
}

MultiScaleFeatures MambaChangeDetector::fuse(const Tensor& pre, const Tensor& post) const {
  const auto [fa, fb] = encoder.encode_pair(pre, post);
  MultiScaleFeatures fused;
  for (std::size_t s = 0; s < 4; ++s) fused[s] = difference[s].forward(fa[s], fb[s]);
  return fused;
}

Tensor MambaChangeDetector::forward(const Tensor& pre, const Tensor& post) const {
  return decoder.decode(fuse(pre, post));
}

void MambaChangeDetector::visit_parameters(const std::string& prefix, const ParameterVisitor& fn) {
  encoder.visit_parameters(join_name(prefix, "encoder"), fn);
  for (std::size_t s = 0; s < 4; ++s) {
    difference[s].visit_parameters(join_name(prefix, "difference." + std::to_string(s)), fn);
  }
  decoder.visit_parameters(join_name(prefix, "decoder"), fn);
}

}  // namespace mcd
