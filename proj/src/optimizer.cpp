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
#include "mcd/optimizer.hpp"

#include <cmath>

namespace mcd {

bool takes_weight_decay(const std::string& name) {
  const auto dot = name.rfind('.');
  const std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
  return leaf == "weight";
}

AdamW::AdamW(const std::vector<std::pair<std::string, Tensor>>& params, const AdamWOptions& options)
    : options_(options) {
  if (!(options.lr > 0)) throw Error("learning rate must be > 0");
  if (options.weight_decay < 0) throw Error("weight decay must be >= 0");
  for (const auto& [name, p] : params) {
    slots_.push_back(Slot{name, p, Tensor::zeros(p.shape(), p.dtype()),
                          Tensor::zeros(p.shape(), p.dtype()), takes_weight_decay(name)});
  }
}

void AdamW::step() {
  for (const auto& s : slots_) {
    if (!s.param.has_grad()) continue;
    dispatch(s.param.dtype(), [&]<typename T>() {
      for (T g : s.param.impl()->grad.view<T>()) {
        if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + s.name);
      }
    });
  }
  ++steps_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
  const double lr = options_.lr;
  for (auto& s : slots_) {
    // Parameters that took no part in the loss are left untouched.
    if (!s.param.has_grad()) continue;
    dispatch(s.param.dtype(), [&]<typename T>() {
      auto p = s.param.data<T>();
      auto m = s.m.data<T>();
      auto v = s.v.data<T>();
      const auto g = std::as_const(s.param.impl()->grad).view<T>();
      const double decay = s.decay ? lr * options_.weight_decay : 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = g[i];
        const double mi = options_.beta1 * m[i] + (1 - options_.beta1) * gi;
        const double vi = options_.beta2 * v[i] + (1 - options_.beta2) * gi * gi;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        double pi = p[i];
        pi -= decay * pi;
        pi -= lr * (mi / bc1) / (std::sqrt(vi / bc2) + options_.eps);
        p[i] = static_cast<T>(pi);
      }
    });
  }
}

void AdamW::zero_grad() {
  for (auto& s : slots_) s.param.zero_grad();
}

double AdamW::clip_grad_norm(double max_norm) {
  double sq = 0;
  for (const auto& s : slots_) {
    if (!s.param.has_grad()) continue;
    dispatch(s.param.dtype(), [&]<typename T>() {
      for (T g : std::as_const(s.param.impl()->grad).view<T>()) sq += static_cast<double>(g) * g;
    });
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const double f = max_norm / (norm + 1e-12);
    for (auto& s : slots_) {
      if (!s.param.has_grad()) continue;
      dispatch(s.param.dtype(), [&]<typename T>() {
        for (T& g : s.param.impl()->grad.view<T>()) g = static_cast<T>(g * f);
      });
    }
  }
  return norm;
}

}  // namespace mcd
