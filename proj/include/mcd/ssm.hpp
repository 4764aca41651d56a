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
#include <vector>

#include "mcd/nn.hpp"
#include "mcd/tensor.hpp"

namespace mcd {

// How B is discretized. A is always discretized exactly as exp(delta * A).
enum class Discretization {
  kExact,   // B_bar = (delta A)^-1 (exp(delta A) - 1) delta B
  kTaylor,  // B_bar = delta B
};

const char* discretization_name(Discretization mode);
Discretization parse_discretization(const std::string& name);

// Per-token discretized system for one sequence.
struct DiscreteStep {
  Tensor a_bar;  // [L, D, N]
  Tensor b_bar;  // [L, D, N]
};

// a: [D, N] (strictly negative), b: [L, N], delta: [L, D]. Differentiable in
// all three. Exact mode rejects non-positive delta.
DiscreteStep discretize_zoh(const Tensor& a, const Tensor& b, const Tensor& delta,
                            Discretization mode);

// Fused selective scan over a batch of sequences, h_0 = 0:
//   h_t = exp(delta_t A) h_{t-1} + B_bar_t x_t,  y_t = C_t h_t + D x_t
// x, delta: [batch, L, D]; a: [D, N]; b, c: [batch, L, N]; d_skip: [D].
// Sequential over L, vectorized over (batch, D, N), with a hand-derived
// backward pass.
Tensor selective_scan(const Tensor& x, const Tensor& delta, const Tensor& a, const Tensor& b,
                      const Tensor& c, const Tensor& d_skip, Discretization mode);

struct SSMConfig {
  std::int64_t d_inner = 0;
  std::int64_t d_state = 8;
  // Low-rank width of the delta projection; 0 selects max(1, d_inner / 16).
  std::int64_t dt_rank = 0;
  Discretization mode = Discretization::kTaylor;

  std::int64_t resolved_dt_rank() const;
};

struct SelectiveInputs {
  Tensor delta;  // [batch, L, D], softplus output
  Tensor b;      // [batch, L, N]
  Tensor c;      // [batch, L, N]
};

// The projections that make delta, B and C functions of the token.
class ScanProjection : public Module {
 public:
  ScanProjection() = default;
  ScanProjection(const SSMConfig& config, Rng& rng);

  SelectiveInputs forward(const Tensor& x) const;
  void visit_parameters(const std::string& prefix, const ParameterVisitor& fn) override;

  Linear x_proj;   // D -> dt_rank + 2N, no bias
  Linear dt_proj;  // dt_rank -> D, bias holds the delta bias
  std::int64_t dt_rank = 1;
  std::int64_t d_state = 1;
};

// A_log rows initialized to log(1..N), so A = -exp(A_log) = -(1..N).
Tensor init_a_log(std::int64_t d_inner, std::int64_t d_state);

// One selective SSM: shared A/D plus one projection set.
class SelectiveSSM : public Module {
 public:
  SelectiveSSM() = default;
  SelectiveSSM(const SSMConfig& config, Rng& rng);

  // x: [batch, L, D] -> [batch, L, D]
  Tensor forward(const Tensor& x) const;
  SelectiveInputs input_dependent_params(const Tensor& x) const { return proj.forward(x); }
  Tensor a_matrix() const { return neg(exp(a_log)); }
  void visit_parameters(const std::string& prefix, const ParameterVisitor& fn) override;

  const SSMConfig& config() const { return config_; }

  Tensor a_log;   // [D, N]
  Tensor d_skip;  // [D]
  ScanProjection proj;

 private:
  SSMConfig config_;
};

// Flattening orders of an H x W map. Reverse directions are exact reversals of
// their forward partner.
enum class ScanDirection {
  kRowForward = 0,
  kRowReverse = 1,
  kColForward = 2,
  kColReverse = 3,
};

inline constexpr std::array<ScanDirection, 4> kAllDirections = {
    ScanDirection::kRowForward, ScanDirection::kRowReverse, ScanDirection::kColForward,
    ScanDirection::kColReverse};

// order[i] = row-major pixel index visited at step i.
std::vector<std::int64_t> scan_order(std::int64_t height, std::int64_t width,
                                     ScanDirection direction);
// [B, H, W, D] -> [B, H*W, D] in the direction's visiting order.
Tensor to_sequence(const Tensor& fmap, ScanDirection direction);
// Inverse of to_sequence.
Tensor from_sequence(const Tensor& seq, ScanDirection direction, std::int64_t height,
                     std::int64_t width);

// Four-direction 2-D selective scan. Each direction owns its projections; A
// and D are shared. Outputs are merged by summation in enum order.
class SS2D : public Module {
 public:
  SS2D() = default;
  SS2D(const SSMConfig& config, Rng& rng);

  // [B, H, W, D] -> [B, H, W, D]
  Tensor forward(const Tensor& fmap) const;
  Tensor scan_direction(const Tensor& fmap, ScanDirection direction) const;
  void visit_parameters(const std::string& prefix, const ParameterVisitor& fn) override;

  const SSMConfig& config() const { return config_; }

  Tensor a_log;
  Tensor d_skip;
  std::array<ScanProjection, 4> directions;

 private:
  SSMConfig config_;
};

}  // namespace mcd
