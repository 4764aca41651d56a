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
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mcd/ops.hpp"
#include "mcd/tensor.hpp"

namespace mcd {

// Seeded generator. Distributions are computed from raw engine output so the
// same seed gives the same numbers with any standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [lo, hi).
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  std::string state() const;
  void set_state(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

using ParameterVisitor = std::function<void(const std::string& name, Tensor& param)>;

std::string join_name(const std::string& prefix, const std::string& name);

class Module {
 public:
  virtual ~Module() = default;

  virtual void visit_parameters(const std::string& prefix, const ParameterVisitor& fn) = 0;

  std::vector<std::pair<std::string, Tensor>> named_parameters();
  std::int64_t parameter_count();
  void zero_grad();
};

Tensor uniform_parameter(Shape shape, double bound, Rng& rng);
Tensor constant_parameter(Shape shape, double value);

class Linear : public Module {
 public:
  Linear() = default;
  Linear(std::int64_t in_features, std::int64_t out_features, bool with_bias, Rng& rng);

  Tensor forward(const Tensor& x) const { return linear(x, weight, bias); }
  void visit_parameters(const std::string& prefix, const ParameterVisitor& fn) override;

  std::int64_t in_features() const { return weight.size(0); }
  std::int64_t out_features() const { return weight.size(1); }

  Tensor weight;  // [in, out]
  Tensor bias;    // [out] or undefined
};

class LayerNorm : public Module {
 public:
  LayerNorm() = default;
  explicit LayerNorm(std::int64_t dim, double eps = 1e-5);

  Tensor forward(const Tensor& x) const { return layer_norm(x, gamma, beta, eps_); }
  void visit_parameters(const std::string& prefix, const ParameterVisitor& fn) override;

  Tensor gamma;
  Tensor beta;

 private:
  double eps_ = 1e-5;
};

class Conv2d : public Module {
 public:
  Conv2d() = default;
  Conv2d(std::int64_t in_channels, std::int64_t out_channels, int kernel,
         Conv2dOptions options, bool with_bias, Rng& rng);

  // NCHW in, NCHW out.
  Tensor forward(const Tensor& x) const { return conv2d(x, weight, bias, options_); }
  // NHWC in, NHWC out.
  Tensor forward_nhwc(const Tensor& x) const;
  void visit_parameters(const std::string& prefix, const ParameterVisitor& fn) override;

  const Conv2dOptions& options() const { return options_; }

  Tensor weight;  // [out, in/groups, k, k]
  Tensor bias;

 private:
  Conv2dOptions options_;
};

}  // namespace mcd
