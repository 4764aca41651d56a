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
#include "mcd/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mcd/blocks.hpp"
#include "mcd/decoder.hpp"
#include "mcd/difference.hpp"
#include "mcd/kv.hpp"
#include "mcd/model.hpp"
#include "mcd/ops.hpp"
#include "mcd/ssm.hpp"

namespace mcd {
namespace {

constexpr double kPrimitiveTol = 1e-4;
constexpr double kCompositeTol = 1e-3;

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t.set(i, rng.uniform(lo, hi));
  t.requires_grad_();
  return t;
}

// Values at least `gap` apart, so max-style ops have no near ties.
Tensor spread_tensor(Rng& rng, Shape shape, double gap = 0.05) {
  Tensor t = Tensor::zeros(std::move(shape));
  std::vector<double> v(static_cast<std::size_t>(t.numel()));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = gap * static_cast<double>(i);
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);
  }
  for (std::size_t i = 0; i < v.size(); ++i) t.set(static_cast<std::int64_t>(i), v[i] - gap * v.size() / 2);
  t.requires_grad_();
  return t;
}

// Values with |v| >= margin, away from kinks at 0.
Tensor off_zero_tensor(Rng& rng, Shape shape, double margin = 0.1) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    const double m = rng.uniform(margin, 1.0);
    t.set(i, rng.bernoulli(0.5) ? m : -m);
  }
  t.requires_grad_();
  return t;
}

NamedTensors module_params(Module& m) { return m.named_parameters(); }

NamedTensors with(NamedTensors a, const NamedTensors& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

// Nudges every parameter away from its initial value so structurally zero
// paths (zeroed biases, unit norms) are exercised too.
void perturb(Module& m, Rng& rng, double amount = 0.1) {
  for (auto& [name, t] : m.named_parameters()) {
    for (std::int64_t i = 0; i < t.numel(); ++i) t.set(i, t.at(i) + rng.uniform(-amount, amount));
  }
}

}  // namespace

GradCheckResult check_gradients(const std::string& name, const std::function<Tensor()>& f,
                                const NamedTensors& wrt, double tolerance,
                                const GradCheckOptions& options) {
  GradCheckResult result{name, 0.0, tolerance, 0.0, 0, ""};
  Rng rng(options.seed ^ std::hash<std::string>{}(name));

  Tensor weights;
  const auto objective = [&](const Tensor& out) { return sum(out * weights); };
  {
    NoGradGuard no_grad;
    const Tensor probe = f();
    weights = Tensor::zeros(probe.shape(), probe.dtype());
    for (std::int64_t i = 0; i < weights.numel(); ++i) {
      const double w = rng.uniform(0.5, 1.5);
      weights.set(i, rng.bernoulli(0.5) ? w : -w);
    }
  }

  for (const auto& [n, t] : wrt) {
    if (!t.is_leaf() || !t.requires_grad()) throw Error("check_gradients: " + n + " is not a trainable leaf");
    Tensor(t).zero_grad();
  }
  objective(f()).backward();
  std::vector<Tensor> analytic;
  for (const auto& [n, t] : wrt) analytic.push_back(t.grad());

  NoGradGuard no_grad;
  // Central differences of an objective accumulated from many terms carry
  // a rounding error of about eps * sum|w * out| / step. Gradients much
  // closer to that level than 1/tolerance cannot be resolved, so it sets
  // the floor of the denominator.
  const double unit = default_dtype() == DType::kF64 ? std::numeric_limits<double>::epsilon()
                                                      : std::numeric_limits<float>::epsilon();
  double magnitude = 0;
  {
    const Tensor out = f();
    for (std::int64_t i = 0; i < out.numel(); ++i) magnitude += std::abs(out.at(i) * weights.at(i));
  }
  const double floor = std::max(options.floor, unit * magnitude / options.step / tolerance);
  result.floor = floor;
  for (std::size_t k = 0; k < wrt.size(); ++k) {
    Tensor t = wrt[k].second;
    const std::int64_t n = t.numel();
    std::vector<std::int64_t> idx;
    if (options.entries_per_tensor <= 0 || n <= options.entries_per_tensor) {
      for (std::int64_t i = 0; i < n; ++i) idx.push_back(i);
    } else {
      for (std::int64_t j = 0; j < options.entries_per_tensor; ++j) {
        idx.push_back(j * n / options.entries_per_tensor + (n / options.entries_per_tensor) / 2);
      }
    }
    for (const std::int64_t i : idx) {
      const double orig = t.at(i);
      t.set(i, orig + options.step);
      const double up = objective(f()).item();
      t.set(i, orig - options.step);
      const double down = objective(f()).item();
      t.set(i, orig);
      const double numeric = (up - down) / (2 * options.step);
      const double auto_g = analytic[k].at(i);
      const double err =
          std::abs(auto_g - numeric) / std::max({std::abs(auto_g), std::abs(numeric), floor});
      ++result.entries;
      if (err > result.max_error || result.worst.empty()) {
        result.max_error = err;
        result.worst = wrt[k].first + "[" + std::to_string(i) + "] auto " + format_double(auto_g) +
                       " numeric " + format_double(numeric);
      }
    }
    t.zero_grad();
  }
  return result;
}

std::vector<GradCheckResult> run_gradcheck_suite(
    const GradCheckOptions& options, const std::function<void(const GradCheckResult&)>& on_result) {
  DTypeGuard precision(options.precision);
  std::vector<GradCheckResult> results;
  Rng rng(options.seed + 17);
  const auto check = [&](const std::string& name, const std::function<Tensor()>& f,
                         const NamedTensors& wrt, double tol, GradCheckOptions opt) {
    results.push_back(check_gradients(name, f, wrt, tol, opt));
    if (on_result) on_result(results.back());
  };
  GradCheckOptions full = options;
  full.entries_per_tensor = 0;

  // Elementwise.
  {
    const Tensor x = random_tensor(rng, {3, 4}, -2, 2);
    const Tensor pos = random_tensor(rng, {3, 4}, 0.2, 2);
    const Tensor kinked = off_zero_tensor(rng, {3, 4});
    check("neg", [&] { return neg(x); }, {{"x", x}}, kPrimitiveTol, full);
    check("exp", [&] { return exp(x); }, {{"x", x}}, kPrimitiveTol, full);
    check("expm1", [&] { return expm1(x); }, {{"x", x}}, kPrimitiveTol, full);
    check("log", [&] { return log(pos); }, {{"x", pos}}, kPrimitiveTol, full);
    check("sigmoid", [&] { return sigmoid(x); }, {{"x", x}}, kPrimitiveTol, full);
    check("silu", [&] { return silu(x); }, {{"x", x}}, kPrimitiveTol, full);
    check("softplus", [&] { return softplus(x); }, {{"x", x}}, kPrimitiveTol, full);
    check("relu", [&] { return relu(kinked); }, {{"x", kinked}}, kPrimitiveTol, full);
    check("tanh", [&] { return tanh(x); }, {{"x", x}}, kPrimitiveTol, full);
    check("square", [&] { return square(x); }, {{"x", x}}, kPrimitiveTol, full);
    check("scale", [&] { return add_scalar(scale(x, -1.5), 0.25); }, {{"x", x}}, kPrimitiveTol, full);
  }
  // Broadcasting binaries.
  {
    const Tensor a = random_tensor(rng, {2, 3, 4});
    const Tensor b = random_tensor(rng, {3, 1});
    const Tensor denom = random_tensor(rng, {1, 4}, 0.5, 2);
    check("add_broadcast", [&] { return a + b; }, {{"a", a}, {"b", b}}, kPrimitiveTol, full);
    check("sub_broadcast", [&] { return b - a; }, {{"a", a}, {"b", b}}, kPrimitiveTol, full);
    check("mul_broadcast", [&] { return a * b; }, {{"a", a}, {"b", b}}, kPrimitiveTol, full);
    check("div_broadcast", [&] { return a / denom; }, {{"a", a}, {"denom", denom}}, kPrimitiveTol, full);
  }
  // Affine, convolution, normalization.
  {
    const Tensor x = random_tensor(rng, {3, 4});
    const Tensor w = random_tensor(rng, {4, 2});
    const Tensor bias = random_tensor(rng, {2});
    check("linear", [&] { return linear(x, w, bias); }, {{"x", x}, {"weight", w}, {"bias", bias}},
          kPrimitiveTol, full);

    const Tensor img = random_tensor(rng, {2, 3, 7, 7});
    const Tensor k = random_tensor(rng, {4, 3, 3, 3});
    const Tensor kb = random_tensor(rng, {4});
    check("conv2d_stride2", [&] { return conv2d(img, k, kb, {.stride = 2, .padding = 1, .groups = 1}); },
          {{"x", img}, {"weight", k}, {"bias", kb}}, kPrimitiveTol, full);
    const Tensor dx = random_tensor(rng, {2, 4, 8, 8});
    const Tensor dk = random_tensor(rng, {4, 1, 3, 3});
    check("conv2d_depthwise", [&] { return conv2d(dx, dk, {}, {.stride = 1, .padding = 1, .groups = 4}); },
          {{"x", dx}, {"weight", dk}}, kPrimitiveTol, full);

    const Tensor ln_x = random_tensor(rng, {2, 5}, -2, 2);
    const Tensor gamma = random_tensor(rng, {5}, 0.5, 1.5);
    const Tensor beta = random_tensor(rng, {5});
    check("layer_norm", [&] { return layer_norm(ln_x, gamma, beta, 1e-5); },
          {{"x", ln_x}, {"gamma", gamma}, {"beta", beta}}, kPrimitiveTol, full);
  }
  // Data movement.
  {
    const Tensor x = random_tensor(rng, {2, 3, 4});
    const Tensor y = random_tensor(rng, {2, 2, 4});
    check("reshape", [&] { return reshape(x, {4, -1}); }, {{"x", x}}, kPrimitiveTol, full);
    check("permute", [&] { return permute(x, {2, 0, 1}); }, {{"x", x}}, kPrimitiveTol, full);
    check("transpose", [&] { return transpose(x, 0, 2); }, {{"x", x}}, kPrimitiveTol, full);
    check("flip", [&] { return flip(x, 1); }, {{"x", x}}, kPrimitiveTol, full);
    check("concat", [&] { return concat({x, y}, 1); }, {{"x", x}, {"y", y}}, kPrimitiveTol, full);
    check("slice", [&] { return slice(x, 2, 1, 2); }, {{"x", x}}, kPrimitiveTol, full);
    check("split", [&] { return scale(split(x, 1, {1, 2})[1], 2.0) + split(x, 1, {2, 1})[0]; }, {{"x", x}},
          kPrimitiveTol, full);
    const Tensor fmap = random_tensor(rng, {2, 3, 2, 4});
    check("spatial_flatten", [&] { return spatial_flatten(fmap); }, {{"x", fmap}}, kPrimitiveTol, full);
  }
  // Reductions and resizing.
  {
    const Tensor x = random_tensor(rng, {2, 3, 4});
    const Tensor distinct = spread_tensor(rng, {2, 3, 4});
    check("sum", [&] { return sum(x); }, {{"x", x}}, kPrimitiveTol, full);
    check("mean", [&] { return mean(x); }, {{"x", x}}, kPrimitiveTol, full);
    check("mean_axis", [&] { return mean_axis(x, 1, true); }, {{"x", x}}, kPrimitiveTol, full);
    check("max_axis", [&] { return max_axis(distinct, 2); }, {{"x", distinct}}, kPrimitiveTol, full);
    const Tensor map = random_tensor(rng, {1, 2, 3, 3});
    check("upsample_nearest", [&] { return upsample_nearest(map, 2); }, {{"x", map}}, kPrimitiveTol, full);
    check("upsample_bilinear", [&] { return upsample_bilinear(map, 2); }, {{"x", map}}, kPrimitiveTol, full);
    check("upsample_bilinear_x4", [&] { return upsample_bilinear(map, 4); }, {{"x", map}}, kPrimitiveTol, full);
  }
  // Loss.
  {
    const Tensor logits = random_tensor(rng, {1, 2, 4, 4}, -2, 2);
    Tensor labels = Tensor::zeros({1, 4, 4});
    for (std::int64_t i = 0; i < labels.numel(); ++i) labels.set(i, rng.bernoulli(0.5) ? 1.0 : 0.0);
    check("cross_entropy", [&] { return cross_entropy_2class(logits, labels); }, {{"logits", logits}},
          kPrimitiveTol, full);
  }
  // State space primitives.
  {
    const Tensor a = random_tensor(rng, {3, 2}, -2.0, -0.2);
    const Tensor b = random_tensor(rng, {4, 2});
    const Tensor delta = random_tensor(rng, {4, 3}, 0.05, 1.0);
    for (const auto mode : {Discretization::kExact, Discretization::kTaylor}) {
      const std::string tag = discretization_name(mode);
      check("discretize_a_" + tag, [&] { return discretize_zoh(a, b, delta, mode).a_bar; },
            {{"A", a}, {"B", b}, {"delta", delta}}, kPrimitiveTol, full);
      check("discretize_b_" + tag, [&] { return discretize_zoh(a, b, delta, mode).b_bar; },
            {{"A", a}, {"B", b}, {"delta", delta}}, kPrimitiveTol, full);
    }
    const Tensor x = random_tensor(rng, {2, 5, 3});
    const Tensor dt = random_tensor(rng, {2, 5, 3}, 0.05, 1.0);
    const Tensor bs = random_tensor(rng, {2, 5, 2});
    const Tensor cs = random_tensor(rng, {2, 5, 2});
    const Tensor dskip = random_tensor(rng, {3});
    for (const auto mode : {Discretization::kExact, Discretization::kTaylor}) {
      check(std::string("selective_scan_") + discretization_name(mode),
            [&] { return selective_scan(x, dt, a, bs, cs, dskip, mode); },
            {{"x", x}, {"delta", dt}, {"A", a}, {"B", bs}, {"C", cs}, {"D", dskip}}, kPrimitiveTol, full);
    }
  }

  // Composites.
  {
    Rng init(options.seed + 1);
    SelectiveSSM ssm({.d_inner = 4, .d_state = 3, .dt_rank = 0, .mode = Discretization::kTaylor}, init);
    perturb(ssm, init);
    const Tensor x = random_tensor(rng, {2, 6, 4});
    check("selective_ssm", [&] { return ssm.forward(x); }, with({{"x", x}}, module_params(ssm)),
          kCompositeTol, full);

    SS2D ss2d({.d_inner = 4, .d_state = 2, .dt_rank = 0, .mode = Discretization::kExact}, init);
    perturb(ss2d, init);
    const Tensor fmap = random_tensor(rng, {1, 2, 3, 4});
    check("ss2d", [&] { return ss2d.forward(fmap); }, with({{"x", fmap}}, module_params(ss2d)),
          kCompositeTol, full);

    const VSSConfig vc{.d_model = 4, .d_state = 2, .expand = 2, .mode = Discretization::kTaylor};
    VSSBlock vss(vc, init);
    perturb(vss, init);
    const Tensor v_in = random_tensor(rng, {1, 3, 3, 4});
    check("vss_block", [&] { return vss.forward(v_in); }, with({{"x", v_in}}, module_params(vss)),
          kCompositeTol, full);

    CAVSSBlock cavss(vc, 2, init);
    perturb(cavss, init);
    check("cavss_block", [&] { return cavss.forward(v_in); }, with({{"x", v_in}}, module_params(cavss)),
          kCompositeTol, full);

    for (const auto variant : {FusionVariant::kConcatenation, FusionVariant::kDifference}) {
      DifferenceModule dm({.channels = 3, .out_channels = 3, .d_state = 2, .mode = Discretization::kTaylor,
                           .variant = variant},
                          init);
      perturb(dm, init);
      const Tensor pre = random_tensor(rng, {1, 4, 4, 3});
      const Tensor post = random_tensor(rng, {1, 4, 4, 3});
      check(std::string("difference_module_") + fusion_name(variant), [&] { return dm.forward(pre, post); },
            with({{"pre", pre}, {"post", post}}, module_params(dm)), kCompositeTol, full);
    }
  }
  {
    // Tiny end-to-end model on 32x32 inputs. Every parameter tensor is
    // probed, at a bounded number of entries for the larger ones.
    ModelConfig cfg;
    cfg.encoder.c1 = 4;
    cfg.encoder.depths = {1, 1, 1, 1};
    cfg.encoder.d_state = 2;
    cfg.encoder.expand = 1;
    cfg.attention_reduction = 2;
    MambaChangeDetector model(cfg, options.seed + 3);
    Rng init(options.seed + 4);
    perturb(model, init);
    const Tensor pre = random_tensor(rng, {1, 3, 32, 32}, 0, 1);
    const Tensor post = random_tensor(rng, {1, 3, 32, 32}, 0, 1);
    GradCheckOptions sampled = options;
    if (sampled.entries_per_tensor <= 0) sampled.entries_per_tensor = 4;
    NamedTensors decoder_params;
    for (auto& p : model.decoder.named_parameters()) decoder_params.push_back(p);
    check("decoder_end_to_end", [&] { return model.forward(pre, post); }, decoder_params, kCompositeTol, sampled);
    check("model_end_to_end", [&] { return model.forward(pre, post); },
          with({{"pre", pre}, {"post", post}}, model.named_parameters()), kCompositeTol, sampled);
  }
  return results;
}

}  // namespace mcd
