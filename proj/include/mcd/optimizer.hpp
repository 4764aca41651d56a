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
#include <string>
#include <utility>
#include <vector>

#include "mcd/tensor.hpp"

namespace mcd {

struct AdamWOptions {
  double lr = 6e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Whether a named parameter takes weight decay. Norm scales and shifts,
// biases, A_log and D are left alone.
bool takes_weight_decay(const std::string& name);

// AdamW with decoupled decay: p <- p - lr*wd*p, then the Adam step with
// bias-corrected moments.
class AdamW {
 public:
  struct Slot {
    std::string name;
    Tensor param;
    Tensor m;
    Tensor v;
    bool decay = true;
  };

  AdamW(const std::vector<std::pair<std::string, Tensor>>& params, const AdamWOptions& options);

  // Reads each parameter's accumulated gradient. Throws NumericError naming
  // the first parameter whose gradient is not finite; nothing is updated then.
  void step();
  void zero_grad();
  // Rescales gradients so their global L2 norm is at most max_norm. Returns
  // the norm before clipping.
  double clip_grad_norm(double max_norm);

  std::int64_t steps() const { return steps_; }
  void set_steps(std::int64_t s) { steps_ = s; }
  const AdamWOptions& options() const { return options_; }
  void set_lr(double lr) { options_.lr = lr; }
  std::vector<Slot>& slots() { return slots_; }
  const std::vector<Slot>& slots() const { return slots_; }

 private:
  AdamWOptions options_;
  std::vector<Slot> slots_;
  std::int64_t steps_ = 0;
};

}  // namespace mcd
