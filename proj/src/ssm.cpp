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
#include "mcd/ssm.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mcd {

const char* discretization_name(Discretization mode) {
  return mode == Discretization::kExact ? "exact" : "taylor";
}

Discretization parse_discretization(const std::string& name) {
  if (name == "exact") return Discretization::kExact;
  if (name == "taylor") return Discretization::kTaylor;
  throw Error("unknown discretization '" + name + "' (expected exact or taylor)");
}

DiscreteStep discretize_zoh(const Tensor& a, const Tensor& b, const Tensor& delta,
                            Discretization mode) {
  if (a.dim() != 2 || b.dim() != 2 || delta.dim() != 2 || b.size(1) != a.size(1) ||
      delta.size(1) != a.size(0) || delta.size(0) != b.size(0)) {
    throw ShapeError("discretize_zoh: A " + shape_str(a.shape()) + ", B " +
                     shape_str(b.shape()) + ", delta " + shape_str(delta.shape()));
  }
  const std::int64_t len = delta.size(0), d = a.size(0), n = a.size(1);
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    if (!(a.at(i) < 0.0)) throw NumericError("discretize_zoh: A must be strictly negative");
  }
  if (mode == Discretization::kExact) {
    for (std::int64_t i = 0; i < delta.numel(); ++i) {
      if (!(delta.at(i) > 0.0)) {
        throw NumericError("discretize_zoh: exact mode needs delta > 0, got " +
                           std::to_string(delta.at(i)) + " at index " + std::to_string(i));
      }
    }
  }
  const Tensor delta3 = reshape(delta, {len, d, 1});
  const Tensor a3 = reshape(a, {1, d, n});
  const Tensor b3 = reshape(b, {len, 1, n});
  const Tensor delta_a = delta3 * a3;
  DiscreteStep step;
  step.a_bar = exp(delta_a);
  if (mode == Discretization::kTaylor) {
    step.b_bar = delta3 * b3;
  } else {
    step.b_bar = (expm1(delta_a) / a3) * b3;
  }
  return step;
}

Tensor selective_scan(const Tensor& x, const Tensor& delta, const Tensor& a, const Tensor& b,
                      const Tensor& c, const Tensor& d_skip, Discretization mode) {
  if (x.dim() != 3 || a.dim() != 2) {
    throw ShapeError("selective_scan: x " + shape_str(x.shape()) + ", A " +
                     shape_str(a.shape()));
  }
  const std::int64_t batch = x.size(0), len = x.size(1), dim = x.size(2);
  const std::int64_t n = a.size(1);
  if (delta.shape() != x.shape() || a.size(0) != dim || b.shape() != Shape{batch, len, n} ||
      c.shape() != Shape{batch, len, n} || d_skip.shape() != Shape{dim}) {
    throw ShapeError("selective_scan: inconsistent shapes x " + shape_str(x.shape()) +
                     ", delta " + shape_str(delta.shape()) + ", A " + shape_str(a.shape()) +
                     ", B " + shape_str(b.shape()) + ", C " + shape_str(c.shape()) + ", D " +
                     shape_str(d_skip.shape()));
  }
  for (const Tensor* t : {&delta, &a, &b, &c, &d_skip}) {
    detail::check_same_dtype(x, *t, "selective_scan");
  }
  const bool exact = mode == Discretization::kExact;

  return dispatch(x.dtype(), [&]<typename T>() {
    const T* px = x.data<T>().data();
    const T* pdt = delta.data<T>().data();
    const T* pa = a.data<T>().data();
    const T* pb = b.data<T>().data();
    const T* pc = c.data<T>().data();
    const T* pd = d_skip.data<T>().data();
    if (exact) {
      for (std::int64_t i = 0; i < delta.numel(); ++i) {
        if (!(pdt[i] > T(0))) throw NumericError("selective_scan: exact mode needs delta > 0");
      }
    }

    Buffer out(x.dtype(), static_cast<std::size_t>(x.numel()));
    T* y = out.view<T>().data();
    // Every hidden state is kept for the backward sweep: [batch, L, D, N].
    auto states = std::make_shared<std::vector<T>>(
        static_cast<std::size_t>(batch * len * dim * n), T(0));
    T* hs = states->data();
    std::vector<T> h(static_cast<std::size_t>(batch * dim * n), T(0));

    for (std::int64_t t = 0; t < len; ++t) {
      for (std::int64_t bi = 0; bi < batch; ++bi) {
        const std::int64_t tok = bi * len + t;
        const T* bt = pb + tok * n;
        const T* ct = pc + tok * n;
        for (std::int64_t d = 0; d < dim; ++d) {
          const T dt = pdt[tok * dim + d];
          const T xv = px[tok * dim + d];
          const T* ad = pa + d * n;
          T* hd = h.data() + (bi * dim + d) * n;
          T acc = 0;
          for (std::int64_t k = 0; k < n; ++k) {
            const T da = dt * ad[k];
            const T abar = std::exp(da);
            const T bbar = exact ? std::expm1(da) / ad[k] * bt[k] : dt * bt[k];
            hd[k] = abar * hd[k] + bbar * xv;
            acc += ct[k] * hd[k];
          }
          std::copy(hd, hd + n, hs + (tok * dim + d) * n);
          y[tok * dim + d] = acc + pd[d] * xv;
        }
      }
    }

    return detail::make_result(
        x.shape(), std::move(out), {x, delta, a, b, c, d_skip}, "selective_scan",
        [=](const TensorImpl& res) {
          const T* gy = res.grad.view<T>().data();
          const T* px = x.data<T>().data();
          const T* pdt = delta.data<T>().data();
          const T* pa = a.data<T>().data();
          const T* pb = b.data<T>().data();
          const T* pc = c.data<T>().data();
          const T* pd = d_skip.data<T>().data();
          const T* hs = states->data();
          // Gradients are accumulated locally, then added to whichever inputs
          // require them.
          std::vector<T> gx(static_cast<std::size_t>(batch * len * dim), T(0));
          std::vector<T> gdt(gx.size(), T(0));
          std::vector<T> ga(static_cast<std::size_t>(dim * n), T(0));
          std::vector<T> gb(static_cast<std::size_t>(batch * len * n), T(0));
          std::vector<T> gc(gb.size(), T(0));
          std::vector<T> gd(static_cast<std::size_t>(dim), T(0));
          std::vector<T> dh(static_cast<std::size_t>(batch * dim * n), T(0));

          for (std::int64_t t = len - 1; t >= 0; --t) {
            for (std::int64_t bi = 0; bi < batch; ++bi) {
              const std::int64_t tok = bi * len + t;
              const T* bt = pb + tok * n;
              const T* ct = pc + tok * n;
              T* gbt = gb.data() + tok * n;
              T* gct = gc.data() + tok * n;
              for (std::int64_t d = 0; d < dim; ++d) {
                const std::int64_t i = tok * dim + d;
                const T g = gy[i];
                const T dt = pdt[i];
                const T xv = px[i];
                const T* ad = pa + d * n;
                T* gad = ga.data() + d * n;
                const T* h_now = hs + i * n;
                const T* h_prev = t > 0 ? hs + (i - dim) * n : nullptr;
                T* dhd = dh.data() + (bi * dim + d) * n;
                T g_dt = 0;
                T g_x = pd[d] * g;
                gd[static_cast<std::size_t>(d)] += g * xv;
                for (std::int64_t k = 0; k < n; ++k) {
                  gct[k] += g * h_now[k];
                  dhd[k] += g * ct[k];
                  const T da = dt * ad[k];
                  const T abar = std::exp(da);
                  const T hp = h_prev ? h_prev[k] : T(0);
                  const T g_abar = dhd[k] * hp;
                  g_dt += g_abar * abar * ad[k];
                  gad[k] += g_abar * abar * dt;
                  if (exact) {
                    const T em1 = std::expm1(da);
                    const T coef = em1 / ad[k];
                    const T g_coef = dhd[k] * bt[k] * xv;
                    g_dt += g_coef * abar;
                    gad[k] += g_coef * (da * abar - em1) / (ad[k] * ad[k]);
                    gbt[k] += dhd[k] * coef * xv;
                    g_x += dhd[k] * coef * bt[k];
                  } else {
                    g_dt += dhd[k] * bt[k] * xv;
                    gbt[k] += dhd[k] * dt * xv;
                    g_x += dhd[k] * dt * bt[k];
                  }
                  dhd[k] *= abar;
                }
                gx[static_cast<std::size_t>(i)] += g_x;
                gdt[static_cast<std::size_t>(i)] += g_dt;
              }
            }
          }

          auto flush = [](const Tensor& t, const std::vector<T>& g) {
            if (!t.requires_grad()) return;
            T* dst = t.impl()->grad_view<T>().data();
            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
          };
          flush(x, gx);
          flush(delta, gdt);
          flush(a, ga);
          flush(b, gb);
          flush(c, gc);
          flush(d_skip, gd);
        });
  });
}

std::int64_t SSMConfig::resolved_dt_rank() const {
  if (dt_rank > 0) return dt_rank;
  return std::max<std::int64_t>(1, d_inner / 16);
}

ScanProjection::ScanProjection(const SSMConfig& config, Rng& rng)
    : dt_rank(config.resolved_dt_rank()), d_state(config.d_state) {
  x_proj = Linear(config.d_inner, dt_rank + 2 * d_state, false, rng);
  dt_proj = Linear(dt_rank, config.d_inner, true, rng);
  const double w_bound = 1.0 / std::sqrt(static_cast<double>(dt_rank));
  for (std::int64_t i = 0; i < dt_proj.weight.numel(); ++i) {
    dt_proj.weight.set(i, rng.uniform(-w_bound, w_bound));
  }
  // Delta bias = softplus^-1(dt) with dt log-uniform in [1e-3, 1e-1].
  for (std::int64_t i = 0; i < dt_proj.bias.numel(); ++i) {
    const double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
    dt_proj.bias.set(i, dt + std::log(-std::expm1(-dt)));
  }
}

SelectiveInputs ScanProjection::forward(const Tensor& x) const {
  const Tensor proj = x_proj.forward(x);
  auto parts = split(proj, -1, {dt_rank, d_state, d_state});
  SelectiveInputs out;
  out.delta = softplus(dt_proj.forward(parts[0]));
  out.b = parts[1];
  out.c = parts[2];
  return out;
}

void ScanProjection::visit_parameters(const std::string& prefix, const ParameterVisitor& fn) {
  x_proj.visit_parameters(join_name(prefix, "x_proj"), fn);
  dt_proj.visit_parameters(join_name(prefix, "dt_proj"), fn);
}

Tensor init_a_log(std::int64_t d_inner, std::int64_t d_state) {
  Tensor t = Tensor::zeros({d_inner, d_state});
  for (std::int64_t d = 0; d < d_inner; ++d) {
    for (std::int64_t k = 0; k < d_state; ++k) {
      t.set(d * d_state + k, std::log(static_cast<double>(k + 1)));
    }
  }
  t.requires_grad_();
  return t;
}

SelectiveSSM::SelectiveSSM(const SSMConfig& config, Rng& rng)
    : a_log(init_a_log(config.d_inner, config.d_state)),
      d_skip(constant_parameter({config.d_inner}, 1.0)),
      proj(config, rng),
      config_(config) {}

Tensor SelectiveSSM::forward(const Tensor& x) const {
  if (x.dim() != 3 || x.size(2) != config_.d_inner) {
    throw ShapeError("SelectiveSSM: expected [batch, L, " + std::to_string(config_.d_inner) +
                     "], got " + shape_str(x.shape()));
  }
  const SelectiveInputs in = proj.forward(x);
  return selective_scan(x, in.delta, a_matrix(), in.b, in.c, d_skip, config_.mode);
}

void SelectiveSSM::visit_parameters(const std::string& prefix, const ParameterVisitor& fn) {
  fn(join_name(prefix, "A_log"), a_log);
  fn(join_name(prefix, "D"), d_skip);
  proj.visit_parameters(join_name(prefix, "proj"), fn);
}

std::vector<std::int64_t> scan_order(std::int64_t height, std::int64_t width,
                                     ScanDirection direction) {
  const std::int64_t len = height * width;
  std::vector<std::int64_t> order(static_cast<std::size_t>(len));
  for (std::int64_t i = 0; i < len; ++i) {
    std::int64_t pixel = 0;
    switch (direction) {
      case ScanDirection::kRowForward:
        pixel = i;
        break;
      case ScanDirection::kRowReverse:
        pixel = len - 1 - i;
        break;
      case ScanDirection::kColForward:
        pixel = (i % height) * width + i / height;
        break;
      case ScanDirection::kColReverse: {
        const std::int64_t j = len - 1 - i;
        pixel = (j % height) * width + j / height;
        break;
      }
    }
    order[static_cast<std::size_t>(i)] = pixel;
  }
  return order;
}

Tensor to_sequence(const Tensor& fmap, ScanDirection direction) {
  if (fmap.dim() != 4) throw ShapeError("to_sequence: expected [B,H,W,D]");
  const std::int64_t bsz = fmap.size(0), h = fmap.size(1), w = fmap.size(2), d = fmap.size(3);
  switch (direction) {
    case ScanDirection::kRowForward:
      return spatial_flatten(fmap);
    case ScanDirection::kRowReverse:
      return flip(spatial_flatten(fmap), 1);
    case ScanDirection::kColForward:
      return reshape(permute(fmap, {0, 2, 1, 3}), {bsz, w * h, d});
    case ScanDirection::kColReverse:
      return flip(reshape(permute(fmap, {0, 2, 1, 3}), {bsz, w * h, d}), 1);
  }
  return {};
}

Tensor from_sequence(const Tensor& seq, ScanDirection direction, std::int64_t height,
                     std::int64_t width) {
  if (seq.dim() != 3 || seq.size(1) != height * width) {
    throw ShapeError("from_sequence: sequence " + shape_str(seq.shape()) + " for " +
                     std::to_string(height) + "x" + std::to_string(width));
  }
  const std::int64_t bsz = seq.size(0), d = seq.size(2);
  switch (direction) {
    case ScanDirection::kRowForward:
      return reshape(seq, {bsz, height, width, d});
    case ScanDirection::kRowReverse:
      return reshape(flip(seq, 1), {bsz, height, width, d});
    case ScanDirection::kColForward:
      return permute(reshape(seq, {bsz, width, height, d}), {0, 2, 1, 3});
    case ScanDirection::kColReverse:
      return permute(reshape(flip(seq, 1), {bsz, width, height, d}), {0, 2, 1, 3});
  }
  return {};
}

SS2D::SS2D(const SSMConfig& config, Rng& rng)
    : a_log(init_a_log(config.d_inner, config.d_state)),
      d_skip(constant_parameter({config.d_inner}, 1.0)),
      config_(config) {
  for (auto& dir : directions) dir = ScanProjection(config, rng);
}

Tensor SS2D::scan_direction(const Tensor& fmap, ScanDirection direction) const {
  const Tensor seq = to_sequence(fmap, direction);
  const SelectiveInputs in = directions[static_cast<std::size_t>(direction)].forward(seq);
  const Tensor y = selective_scan(seq, in.delta, neg(exp(a_log)), in.b, in.c, d_skip,
                                  config_.mode);
  return from_sequence(y, direction, fmap.size(1), fmap.size(2));
}

Tensor SS2D::forward(const Tensor& fmap) const {
  if (fmap.dim() != 4 || fmap.size(3) != config_.d_inner) {
    throw ShapeError("SS2D: expected [B,H,W," + std::to_string(config_.d_inner) + "], got " +
                     shape_str(fmap.shape()));
  }
  Tensor merged;
  for (ScanDirection dir : kAllDirections) {
    Tensor y = scan_direction(fmap, dir);
    merged = merged.defined() ? merged + y : y;
  }
  return merged;
}

void SS2D::visit_parameters(const std::string& prefix, const ParameterVisitor& fn) {
  fn(join_name(prefix, "A_log"), a_log);
  fn(join_name(prefix, "D"), d_skip);
  for (std::size_t k = 0; k < directions.size(); ++k) {
    directions[k].visit_parameters(join_name(prefix, "dir" + std::to_string(k)), fn);
  }
}

}  // namespace mcd
