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
#include <string>
#include <utility>
#include <vector>

#include "mcd/nn.hpp"
#include "mcd/tensor.hpp"

namespace mcd {

struct GradCheckOptions {
  double step = 1e-5;  // central difference half-width
  // Lower bound on the denominator of the relative error. Each check
  // raises it to the rounding level of its finite differences divided by
  // the tolerance, below which relative error stops meaning anything.
  double floor = 1e-6;
  // 0 checks every entry; otherwise at most this many per tensor, spread
  // evenly over the tensor.
  std::int64_t entries_per_tensor = 0;
  std::uint64_t seed = 0;
  DType precision = DType::kF64;  // used by the suite
};

struct GradCheckResult {
  std::string name;
  double max_error = 0;  // max over entries of |auto - numeric| / max(|auto|, |numeric|, floor)
  double tolerance = 0;
  double floor = 0;  // denominator floor actually used
  std::int64_t entries = 0;
  std::string worst;  // tensor and index of the worst entry
  bool passed() const { return max_error < tolerance; }
};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// Compares autograd against central differences of sum(w * f()) for a fixed
// random weighting w, w.r.t. every entry of the given tensors (which must be
// leaves). Runs in whatever precision the tensors already have.
GradCheckResult check_gradients(const std::string& name, const std::function<Tensor()>& f,
                                const NamedTensors& wrt, double tolerance,
                                const GradCheckOptions& options = {});

// Every differentiable primitive (tolerance 1e-4) and the composite blocks
// and a tiny end-to-end model (1e-3), in options.precision.
std::vector<GradCheckResult> run_gradcheck_suite(
    const GradCheckOptions& options = {},
    const std::function<void(const GradCheckResult&)>& on_result = {});

}  // namespace mcd
