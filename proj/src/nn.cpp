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
#include "mcd/nn.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace mcd {

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (hi <= lo) return lo;
  const auto span = static_cast<std::uint64_t>(hi - lo);
  return lo + static_cast<std::int64_t>(engine_() % span);
}

double Rng::normal() {
  // Box-Muller; one draw per call keeps the stream position simple.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::set_state(const std::string& state) {
  std::istringstream is(state);
  is >> engine_;
  if (is.fail()) throw Error("Rng::set_state: malformed generator state");
}

std::string join_name(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

std::vector<std::pair<std::string, Tensor>> Module::named_parameters() {
  std::vector<std::pair<std::string, Tensor>> out;
  visit_parameters("", [&](const std::string& name, Tensor& p) { out.emplace_back(name, p); });
  return out;
}

std::int64_t Module::parameter_count() {
  std::int64_t n = 0;
  visit_parameters("", [&](const std::string&, Tensor& p) { n += p.numel(); });
  return n;
}

void Module::zero_grad() {
  visit_parameters("", [](const std::string&, Tensor& p) { p.zero_grad(); });
}

Tensor uniform_parameter(Shape shape, double bound, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t.set(i, rng.uniform(-bound, bound));
  t.requires_grad_();
  return t;
}

Tensor constant_parameter(Shape shape, double value) {
  Tensor t = Tensor::full(std::move(shape), value);
  t.requires_grad_();
  return t;
}

Linear::Linear(std::int64_t in_features, std::int64_t out_features, bool with_bias, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_features));
  weight = uniform_parameter({in_features, out_features}, bound, rng);
  if (with_bias) bias = uniform_parameter({out_features}, bound, rng);
}

void Linear::visit_parameters(const std::string& prefix, const ParameterVisitor& fn) {
  fn(join_name(prefix, "weight"), weight);
  if (bias.defined()) fn(join_name(prefix, "bias"), bias);
}

LayerNorm::LayerNorm(std::int64_t dim, double eps)
    : gamma(constant_parameter({dim}, 1.0)), beta(constant_parameter({dim}, 0.0)), eps_(eps) {}

void LayerNorm::visit_parameters(const std::string& prefix, const ParameterVisitor& fn) {
  fn(join_name(prefix, "gamma"), gamma);
  fn(join_name(prefix, "beta"), beta);
}

Conv2d::Conv2d(std::int64_t in_channels, std::int64_t out_channels, int kernel,
               Conv2dOptions options, bool with_bias, Rng& rng)
    : options_(options) {
  const std::int64_t in_per_group = in_channels / options.groups;
  const double fan_in = static_cast<double>(in_per_group * kernel * kernel);
  const double bound = 1.0 / std::sqrt(fan_in);
  weight = uniform_parameter({out_channels, in_per_group, kernel, kernel}, bound, rng);
  if (with_bias) bias = uniform_parameter({out_channels}, bound, rng);
}

Tensor Conv2d::forward_nhwc(const Tensor& x) const {
  const Tensor nchw = permute(x, {0, 3, 1, 2});
  return permute(forward(nchw), {0, 2, 3, 1});
}

void Conv2d::visit_parameters(const std::string& prefix, const ParameterVisitor& fn) {
  fn(join_name(prefix, "weight"), weight);
  if (bias.defined()) fn(join_name(prefix, "bias"), bias);
}

}  // namespace mcd
