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
#include "mcd/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "mcd/image_io.hpp"

namespace mcd {
namespace {

Heatmap gradient_heatmap(const Tensor& grad) {
  const std::int64_t b = grad.size(0), c = grad.size(1), h = grad.size(2), w = grad.size(3);
  Heatmap map{h, w, std::vector<double>(static_cast<std::size_t>(h * w), 0.0)};
  for (std::int64_t n = 0; n < b; ++n) {
    for (std::int64_t k = 0; k < c; ++k) {
      for (std::int64_t i = 0; i < h * w; ++i) {
        map.values[static_cast<std::size_t>(i)] += std::abs(grad.at((n * c + k) * h * w + i));
      }
    }
  }
  const double peak = map.max();
  // Averaging over the batch cancels in the normalization.
  for (auto& v : map.values) v = peak > 0 ? v / peak : 0.0;
  return map;
}

// Per-pixel costs of the non-matmul work.
constexpr double kNormFlops = 5;
constexpr double kActFlops = 4;
constexpr double kScanFlops = 9;
constexpr double kResizeFlops = 8;

double linear_flops(double tokens, double in, double out) { return 2 * tokens * in * out; }
double conv_flops(double out_pixels, double in, double out, double groups, double k) {
  return 2 * out_pixels * out * (in / groups) * k * k;
}

// One selective scan over `tokens` positions of width d with its projections.
double scan_flops(double tokens, std::int64_t d, std::int64_t n) {
  const double r = static_cast<double>(SSMConfig{.d_inner = d, .d_state = n}.resolved_dt_rank());
  const double dd = static_cast<double>(d), nn = static_cast<double>(n);
  return linear_flops(tokens, dd, r + 2 * nn) + linear_flops(tokens, r, dd) + kActFlops * tokens * dd +
         kScanFlops * tokens * dd * nn + 2 * tokens * dd;
}

double vss_flops(double tokens, std::int64_t c, std::int64_t expand, std::int64_t n) {
  const double cc = static_cast<double>(c);
  const double di = static_cast<double>(expand * c);
  double f = kNormFlops * tokens * cc + linear_flops(tokens, cc, 2 * di);
  f += conv_flops(tokens, di, di, di, 3) + kActFlops * tokens * di;
  f += 4 * scan_flops(tokens, expand * c, n) + 3 * tokens * di;
  f += kNormFlops * tokens * di + kActFlops * tokens * di + tokens * di;
  f += linear_flops(tokens, di, cc) + tokens * cc;
  return f;
}

}  // namespace

double Heatmap::max() const {
  return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end());
}

std::int64_t Heatmap::support(double threshold) const {
  return std::count_if(values.begin(), values.end(), [&](double v) { return v > threshold; });
}

ErfMaps effective_receptive_field(ChangeDetector& model, const Tensor& pre, const Tensor& post) {
  Tensor a = pre.clone();
  Tensor b = post.clone();
  a.requires_grad_();
  b.requires_grad_();
  const Tensor logits = model.forward(a, b);
  const std::int64_t h = logits.size(2), w = logits.size(3);
  const Tensor center = slice(slice(slice(logits, 1, 1, 1), 2, h / 2, 1), 3, w / 2, 1);
  sum(center).backward();
  model.zero_grad();
  return ErfMaps{gradient_heatmap(a.grad()), gradient_heatmap(b.grad())};
}

void write_heatmap(const std::string& prefix, const Heatmap& map) {
  Image img(static_cast<int>(map.width), static_cast<int>(map.height), 1);
  for (std::size_t i = 0; i < map.values.size(); ++i) {
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(map.values[i], 0.0, 1.0) * 255.0));
  }
  write_png(prefix + ".png", img);
  std::ofstream out(prefix + ".txt");
  if (!out) throw Error("cannot write " + prefix + ".txt");
  char buf[32];
  for (std::int64_t y = 0; y < map.height; ++y) {
    for (std::int64_t x = 0; x < map.width; ++x) {
      std::snprintf(buf, sizeof(buf), "%.6g", map.values[static_cast<std::size_t>(y * map.width + x)]);
      out << (x ? " " : "") << buf;
    }
    out << "\n";
  }
}

SingleConvDetector::SingleConvDetector(std::uint64_t seed) {
  Rng rng(seed);
  conv = Conv2d(6, 2, 3, {.stride = 1, .padding = 1, .groups = 1}, true, rng);
}

Tensor SingleConvDetector::forward(const Tensor& pre, const Tensor& post) const {
  return conv.forward(concat({pre, post}, 1));
}

void SingleConvDetector::visit_parameters(const std::string& prefix, const ParameterVisitor& fn) {
  conv.visit_parameters(join_name(prefix, "conv"), fn);
}

ConvChangeDetector::Block::Block(std::int64_t channels, std::int64_t expand, Rng& rng) {
  const std::int64_t di = expand * channels;
  const Conv2dOptions depthwise{.stride = 1, .padding = 1, .groups = static_cast<int>(di)};
  norm = LayerNorm(channels);
  in_proj = Linear(channels, 2 * di, false, rng);
  dwconv = Conv2d(di, di, 3, depthwise, true, rng);
  mixer = Conv2d(di, di, 3, depthwise, true, rng);
  for (Conv2d* conv : {&dwconv, &mixer}) {
    for (std::int64_t i = 0; i < conv->bias.numel(); ++i) conv->bias.set(i, 0.0);
  }
  out_norm = LayerNorm(di);
  out_proj = Linear(di, channels, false, rng);
}

Tensor ConvChangeDetector::Block::forward(const Tensor& x) const {
  const std::int64_t di = in_proj.out_features() / 2;
  auto parts = split(in_proj.forward(norm.forward(x)), -1, {di, di});
  const Tensor mixed = mixer.forward_nhwc(silu(dwconv.forward_nhwc(parts[0])));
  return x + out_proj.forward(out_norm.forward(mixed) * silu(parts[1]));
}

void ConvChangeDetector::Block::visit_parameters(const std::string& prefix, const ParameterVisitor& fn) {
  norm.visit_parameters(join_name(prefix, "norm"), fn);
  in_proj.visit_parameters(join_name(prefix, "in_proj"), fn);
  dwconv.visit_parameters(join_name(prefix, "dwconv"), fn);
  mixer.visit_parameters(join_name(prefix, "mixer"), fn);
  out_norm.visit_parameters(join_name(prefix, "out_norm"), fn);
  out_proj.visit_parameters(join_name(prefix, "out_proj"), fn);
}

ConvChangeDetector::ConvChangeDetector(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config.validate();
  Rng rng(seed);
  const EncoderConfig& enc = config.encoder;
  stem_ = Stem(enc.c1, rng);
  for (int s = 0; s < 4; ++s) {
    const auto su = static_cast<std::size_t>(s);
    if (s > 0) downsample_[su - 1] = Downsample(enc.channels(s - 1), rng);
    for (int i = 0; i < enc.depths[su]; ++i) stages_[su].emplace_back(enc.channels(s), enc.expand, rng);
  }
  for (int s = 0; s < 4; ++s) {
    fuse_[static_cast<std::size_t>(s)] = Linear(2 * enc.channels(s), enc.channels(s), true, rng);
  }
  for (int s = 0; s < 4; ++s) {
    for (int i = 0; i < config.decoder_depth; ++i) {
      decoder_[static_cast<std::size_t>(s)].emplace_back(enc.channels(s), enc.expand, rng);
    }
  }
  for (int s = 1; s < 4; ++s) {
    reduce_[static_cast<std::size_t>(s - 1)] = Linear(enc.channels(s), enc.channels(s - 1), false, rng);
  }
  classifier_ = Linear(enc.c1, 2, true, rng);
}

Tensor ConvChangeDetector::forward(const Tensor& pre, const Tensor& post) const {
  auto encode = [this](const Tensor& image) {
    MultiScaleFeatures out;
    Tensor x = stem_.forward(image);
    for (std::size_t s = 0; s < 4; ++s) {
      if (s > 0) x = downsample_[s - 1].forward(x);
      for (const auto& block : stages_[s]) x = block.forward(x);
      out[s] = x;
    }
    return out;
  };
  const MultiScaleFeatures fa = encode(pre), fb = encode(post);
  MultiScaleFeatures fused;
  for (std::size_t s = 0; s < 4; ++s) fused[s] = fuse_[s].forward(concat({fa[s], fb[s]}, 3));
  Tensor x = fused[3];
  for (std::size_t l = 3;; --l) {
    for (const auto& block : decoder_[l]) x = block.forward(x);
    if (l == 0) break;
    const Tensor up = permute(upsample_bilinear(permute(x, {0, 3, 1, 2}), 2), {0, 2, 3, 1});
    x = reduce_[l - 1].forward(up) + fused[l - 1];
  }
  return upsample_bilinear(permute(classifier_.forward(x), {0, 3, 1, 2}), 4);
}

void ConvChangeDetector::visit_parameters(const std::string& prefix, const ParameterVisitor& fn) {
  stem_.visit_parameters(join_name(prefix, "stem"), fn);
  for (std::size_t s = 0; s < 4; ++s) {
    const std::string stage = join_name(prefix, "stages." + std::to_string(s));
    if (s > 0) downsample_[s - 1].visit_parameters(join_name(stage, "downsample"), fn);
    for (std::size_t i = 0; i < stages_[s].size(); ++i) {
      stages_[s][i].visit_parameters(join_name(stage, "blocks." + std::to_string(i)), fn);
    }
    fuse_[s].visit_parameters(join_name(prefix, "fuse." + std::to_string(s)), fn);
    for (std::size_t i = 0; i < decoder_[s].size(); ++i) {
      decoder_[s][i].visit_parameters(
          join_name(prefix, "decoder." + std::to_string(s) + ".blocks." + std::to_string(i)), fn);
    }
    if (s > 0) reduce_[s - 1].visit_parameters(join_name(prefix, "decoder." + std::to_string(s) + ".reduce"), fn);
  }
  classifier_.visit_parameters(join_name(prefix, "classifier"), fn);
}

std::int64_t count_parameters(Module& module) { return module.parameter_count(); }

ParameterBreakdown count_parameters(MambaChangeDetector& model) {
  ParameterBreakdown p;
  p.encoder = model.encoder.parameter_count();
  for (auto& dm : model.difference) p.difference += dm.parameter_count();
  p.decoder = model.decoder.parameter_count();
  return p;
}

FlopBreakdown estimate_flops(const ModelConfig& config, std::int64_t height, std::int64_t width) {
  if (height % 32 != 0 || width % 32 != 0) throw ShapeError("estimate_flops: size must be divisible by 32");
  const EncoderConfig& enc = config.encoder;
  const double hw = static_cast<double>(height * width);
  auto tokens = [&](int s) { return hw / static_cast<double>(16 << (2 * s)); };  // stride 4 << s
  FlopBreakdown f;

  // Encoder, one image.
  const double mid = static_cast<double>(std::max<std::int64_t>(1, enc.c1 / 2));
  const double c1 = static_cast<double>(enc.c1);
  double e = conv_flops(hw / 4, 3, mid, 1, 3) + kActFlops * hw / 4 * mid;
  e += conv_flops(tokens(0), mid, c1, 1, 3) + kNormFlops * tokens(0) * c1;
  for (int s = 0; s < 4; ++s) {
    const double t = tokens(s);
    const double c = static_cast<double>(enc.channels(s));
    if (s > 0) e += kNormFlops * t * 2 * c + linear_flops(t, 2 * c, c);  // merge of the C/2 map
    for (int i = 0; i < enc.depths[static_cast<std::size_t>(s)]; ++i) {
      e += vss_flops(t, enc.channels(s), enc.expand, enc.d_state);
    }
  }
  f.encoder = 2 * e;

  for (int s = 0; s < 4; ++s) {
    const double t = tokens(s);
    const double c = static_cast<double>(enc.channels(s));
    if (config.fusion == FusionVariant::kDifference) {
      f.difference += t * c + linear_flops(t, c, c);
      continue;
    }
    double branch = linear_flops(t, c, c) + t * c + conv_flops(t, c, c, c, 3) + kActFlops * t * c;
    branch += kNormFlops * t * c + t * c;
    f.difference += 2 * branch + 2 * scan_flops(2 * t, enc.channels(s), enc.d_state) + 2 * t * c +
                    linear_flops(t, 2 * c, c);
  }

  for (int s = 3; s >= 0; --s) {
    const double t = tokens(s);
    const double c = static_cast<double>(enc.channels(s));
    const double hidden = static_cast<double>(std::max<std::int64_t>(1, enc.channels(s) / config.attention_reduction));
    for (int i = 0; i < config.decoder_depth; ++i) {
      f.decoder += vss_flops(t, enc.channels(s), enc.expand, enc.d_state) - t * c;  // residual counted below
      f.decoder += 2 * t * c + 2 * (linear_flops(1, c, hidden) + linear_flops(1, hidden, c)) + 2 * t * c;
    }
    if (s > 0) {
      const double up = tokens(s - 1);
      f.decoder += kResizeFlops * up * c + linear_flops(up, c, c / 2) + up * c / 2;
    }
  }
  f.decoder += linear_flops(tokens(0), c1, 2) + kResizeFlops * hw * 2;
  return f;
}

std::string accounting_report(const ModelConfig& config, std::int64_t height, std::int64_t width) {
  NoGradGuard no_grad;
  MambaChangeDetector model(config, 0);
  const ParameterBreakdown p = count_parameters(model);
  const FlopBreakdown f = estimate_flops(config, height, width);
  char buf[1024];
  std::snprintf(buf, sizeof(buf),
                "parameters\n"
                "  encoder     %12lld  (%.2f M)\n"
                "  difference  %12lld  (%.2f M)\n"
                "  decoder     %12lld  (%.2f M)\n"
                "  total       %12lld  (%.2f M)\n"
                "flops at %lldx%lld (per image pair)\n"
                "  encoder     %10.3f G\n"
                "  difference  %10.3f G\n"
                "  decoder     %10.3f G\n"
                "  total       %10.3f G\n",
                static_cast<long long>(p.encoder), p.encoder / 1e6,
                static_cast<long long>(p.difference), p.difference / 1e6,
                static_cast<long long>(p.decoder), p.decoder / 1e6,
                static_cast<long long>(p.total()), p.total() / 1e6,
                static_cast<long long>(height), static_cast<long long>(width),
                f.encoder / 1e9, f.difference / 1e9, f.decoder / 1e9, f.total() / 1e9);
  return buf;
}

}  // namespace mcd
