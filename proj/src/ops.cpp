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
#include "mcd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace mcd {
namespace {

using detail::make_result;

int normalize_axis(int axis, int rank, const char* op) {
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for rank " + std::to_string(rank));
  }
  return a;
}

// [outer, n, inner] view of a shape around one axis.
struct AxisView {
  std::int64_t outer = 1;
  std::int64_t n = 1;
  std::int64_t inner = 1;
};

AxisView axis_view(const Shape& shape, int axis) {
  AxisView v;
  for (int d = 0; d < axis; ++d) v.outer *= shape[static_cast<std::size_t>(d)];
  v.n = shape[static_cast<std::size_t>(axis)];
  for (std::size_t d = static_cast<std::size_t>(axis) + 1; d < shape.size(); ++d) {
    v.inner *= shape[d];
  }
  return v;
}

template <typename T>
const T* cdata(const Tensor& t) {
  return t.data<T>().data();
}

template <typename T>
std::span<const T> out_grad(const TensorImpl& out) {
  return out.grad.view<T>();
}

template <typename T>
T* grad_ptr(const Tensor& t) {
  return t.impl()->grad_view<T>().data();
}

// ------------------------------- unary ------------------------------------

template <typename T>
T stable_softplus(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
void unary_forward(UnaryOp op, const T* x, T* y, std::int64_t n) {
  switch (op) {
    case UnaryOp::kNeg:
      for (std::int64_t i = 0; i < n; ++i) y[i] = -x[i];
      break;
    case UnaryOp::kExp:
      for (std::int64_t i = 0; i < n; ++i) y[i] = std::exp(x[i]);
      break;
    case UnaryOp::kExpm1:
      for (std::int64_t i = 0; i < n; ++i) y[i] = std::expm1(x[i]);
      break;
    case UnaryOp::kLog:
      for (std::int64_t i = 0; i < n; ++i) y[i] = std::log(x[i]);
      break;
    case UnaryOp::kSigmoid:
      for (std::int64_t i = 0; i < n; ++i) y[i] = stable_sigmoid(x[i]);
      break;
    case UnaryOp::kSilu:
      for (std::int64_t i = 0; i < n; ++i) y[i] = x[i] * stable_sigmoid(x[i]);
      break;
    case UnaryOp::kSoftplus:
      for (std::int64_t i = 0; i < n; ++i) y[i] = stable_softplus(x[i]);
      break;
    case UnaryOp::kRelu:
      for (std::int64_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
      break;
    case UnaryOp::kTanh:
      for (std::int64_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
      break;
    case UnaryOp::kSquare:
      for (std::int64_t i = 0; i < n; ++i) y[i] = x[i] * x[i];
      break;
  }
}

template <typename T>
void unary_backward(UnaryOp op, const T* x, const T* y, const T* g, T* gx,
                    std::int64_t n) {
  switch (op) {
    case UnaryOp::kNeg:
      for (std::int64_t i = 0; i < n; ++i) gx[i] -= g[i];
      break;
    case UnaryOp::kExp:
      for (std::int64_t i = 0; i < n; ++i) gx[i] += g[i] * y[i];
      break;
    case UnaryOp::kExpm1:
      for (std::int64_t i = 0; i < n; ++i) gx[i] += g[i] * (y[i] + T(1));
      break;
    case UnaryOp::kLog:
      for (std::int64_t i = 0; i < n; ++i) gx[i] += g[i] / x[i];
      break;
    case UnaryOp::kSigmoid:
      for (std::int64_t i = 0; i < n; ++i) gx[i] += g[i] * y[i] * (T(1) - y[i]);
      break;
    case UnaryOp::kSilu:
      for (std::int64_t i = 0; i < n; ++i) {
        const T s = stable_sigmoid(x[i]);
        gx[i] += g[i] * s * (T(1) + x[i] * (T(1) - s));
      }
      break;
    case UnaryOp::kSoftplus:
      for (std::int64_t i = 0; i < n; ++i) gx[i] += g[i] * stable_sigmoid(x[i]);
      break;
    case UnaryOp::kRelu:
      for (std::int64_t i = 0; i < n; ++i) gx[i] += x[i] > T(0) ? g[i] : T(0);
      break;
    case UnaryOp::kTanh:
      for (std::int64_t i = 0; i < n; ++i) gx[i] += g[i] * (T(1) - y[i] * y[i]);
      break;
    case UnaryOp::kSquare:
      for (std::int64_t i = 0; i < n; ++i) gx[i] += g[i] * T(2) * x[i];
      break;
  }
}

// ------------------------------ broadcast ---------------------------------

struct BroadcastPlan {
  Shape out;
  std::vector<std::int64_t> stride_a;
  std::vector<std::int64_t> stride_b;
  bool same = false;
};

std::vector<std::int64_t> aligned_strides(const Shape& in, const Shape& out) {
  const std::size_t r = out.size();
  std::vector<std::int64_t> strides(r, 0);
  std::int64_t s = 1;
  for (std::size_t k = 0; k < in.size(); ++k) {
    const std::size_t d_in = in.size() - 1 - k;
    const std::size_t d_out = r - 1 - k;
    strides[d_out] = in[d_in] == 1 ? 0 : s;
    s *= in[d_in];
  }
  return strides;
}

BroadcastPlan make_plan(const Shape& a, const Shape& b) {
  BroadcastPlan p;
  p.out = broadcast_shape(a, b);
  p.same = (a == b);
  p.stride_a = aligned_strides(a, p.out);
  p.stride_b = aligned_strides(b, p.out);
  return p;
}

// Calls f(out_index, a_index, b_index) for every output element.
template <typename F>
void for_each_pair(const BroadcastPlan& p, F&& f) {
  const std::int64_t total = volume(p.out);
  if (total == 0) return;
  if (p.same) {
    for (std::int64_t i = 0; i < total; ++i) f(i, i, i);
    return;
  }
  const int r = static_cast<int>(p.out.size());
  if (r == 0) {
    f(0, 0, 0);
    return;
  }
  const std::int64_t inner = p.out.back();
  const std::int64_t sa_in = p.stride_a.back();
  const std::int64_t sb_in = p.stride_b.back();
  const std::int64_t outer = total / inner;
  std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
  std::int64_t ia = 0, ib = 0, o = 0;
  for (std::int64_t k = 0; k < outer; ++k) {
    for (std::int64_t j = 0; j < inner; ++j) f(o++, ia + j * sa_in, ib + j * sb_in);
    for (int d = r - 2; d >= 0; --d) {
      const auto ud = static_cast<std::size_t>(d);
      ++idx[ud];
      ia += p.stride_a[ud];
      ib += p.stride_b[ud];
      if (idx[ud] < p.out[ud]) break;
      ia -= p.stride_a[ud] * p.out[ud];
      ib -= p.stride_b[ud] * p.out[ud];
      idx[ud] = 0;
    }
  }
}

// ------------------------------- permute ----------------------------------

std::vector<std::int64_t> contiguous_strides(const Shape& shape) {
  std::vector<std::int64_t> s(shape.size(), 1);
  for (int d = static_cast<int>(shape.size()) - 2; d >= 0; --d) {
    const auto ud = static_cast<std::size_t>(d);
    s[ud] = s[ud + 1] * shape[ud + 1];
  }
  return s;
}

// Calls f(out_index, in_index) walking the permuted output in order.
template <typename F>
void for_each_permuted(const Shape& in_shape, const std::vector<int>& perm, F&& f) {
  const std::size_t r = perm.size();
  Shape out_shape(r);
  const auto in_strides = contiguous_strides(in_shape);
  std::vector<std::int64_t> strides(r);
  for (std::size_t d = 0; d < r; ++d) {
    out_shape[d] = in_shape[static_cast<std::size_t>(perm[d])];
    strides[d] = in_strides[static_cast<std::size_t>(perm[d])];
  }
  const std::int64_t total = volume(out_shape);
  if (total == 0) return;
  if (r == 0) {
    f(0, 0);
    return;
  }
  const std::int64_t inner = out_shape.back();
  const std::int64_t s_in = strides.back();
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t off = 0, o = 0;
  for (std::int64_t k = 0; k < total / inner; ++k) {
    for (std::int64_t j = 0; j < inner; ++j) f(o++, off + j * s_in);
    for (int d = static_cast<int>(r) - 2; d >= 0; --d) {
      const auto ud = static_cast<std::size_t>(d);
      ++idx[ud];
      off += strides[ud];
      if (idx[ud] < out_shape[ud]) break;
      off -= strides[ud] * out_shape[ud];
      idx[ud] = 0;
    }
  }
}

// ------------------------------ bilinear ----------------------------------

struct InterpTable {
  std::vector<std::int64_t> lo, hi;
  std::vector<double> w_lo, w_hi;
};

InterpTable bilinear_table(std::int64_t in, std::int64_t out, int factor) {
  InterpTable t;
  t.lo.resize(static_cast<std::size_t>(out));
  t.hi.resize(static_cast<std::size_t>(out));
  t.w_lo.resize(static_cast<std::size_t>(out));
  t.w_hi.resize(static_cast<std::size_t>(out));
  for (std::int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) / factor - 0.5;
    if (src < 0) src = 0;
    auto lo = static_cast<std::int64_t>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const std::int64_t hi = std::min(lo + 1, in - 1);
    const double frac = src - static_cast<double>(lo);
    const auto uo = static_cast<std::size_t>(o);
    t.lo[uo] = lo;
    t.hi[uo] = hi;
    t.w_hi[uo] = frac;
    t.w_lo[uo] = 1.0 - frac;
  }
  return t;
}

void require_rank(const Tensor& x, int rank, const char* op) {
  if (x.dim() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     ", got " + shape_str(x.shape()));
  }
}

}  // namespace

// =============================== elementwise ===============================

Tensor unary(UnaryOp op, const Tensor& x) {
  return dispatch(x.dtype(), [&]<typename T>() {
    const std::int64_t n = x.numel();
    Buffer out(x.dtype(), static_cast<std::size_t>(n));
    unary_forward<T>(op, cdata<T>(x), out.view<T>().data(), n);
    return make_result(x.shape(), std::move(out), {x}, "unary",
                       [x, op, n](const TensorImpl& res) {
                         unary_backward<T>(op, cdata<T>(x), res.data.view<T>().data(),
                                           out_grad<T>(res).data(), grad_ptr<T>(x), n);
                       });
  });
}

Tensor neg(const Tensor& x) { return unary(UnaryOp::kNeg, x); }
Tensor exp(const Tensor& x) { return unary(UnaryOp::kExp, x); }
Tensor expm1(const Tensor& x) { return unary(UnaryOp::kExpm1, x); }
Tensor log(const Tensor& x) { return unary(UnaryOp::kLog, x); }
Tensor sigmoid(const Tensor& x) { return unary(UnaryOp::kSigmoid, x); }
Tensor silu(const Tensor& x) { return unary(UnaryOp::kSilu, x); }
Tensor softplus(const Tensor& x) { return unary(UnaryOp::kSoftplus, x); }
Tensor relu(const Tensor& x) { return unary(UnaryOp::kRelu, x); }
Tensor tanh(const Tensor& x) { return unary(UnaryOp::kTanh, x); }
Tensor square(const Tensor& x) { return unary(UnaryOp::kSquare, x); }

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t k = 0; k < r; ++k) {
    const std::int64_t ea = k < a.size() ? a[a.size() - 1 - k] : 1;
    const std::int64_t eb = k < b.size() ? b[b.size() - 1 - k] : 1;
    if (ea != eb && ea != 1 && eb != 1) {
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[r - 1 - k] = ea == 1 ? eb : ea;
  }
  return out;
}

Tensor binary(BinaryOp op, const Tensor& a, const Tensor& b) {
  detail::check_same_dtype(a, b, "binary");
  const BroadcastPlan plan = make_plan(a.shape(), b.shape());
  return dispatch(a.dtype(), [&]<typename T>() {
    Buffer out(a.dtype(), static_cast<std::size_t>(volume(plan.out)));
    T* y = out.view<T>().data();
    const T* pa = cdata<T>(a);
    const T* pb = cdata<T>(b);
    switch (op) {
      case BinaryOp::kAdd:
        for_each_pair(plan, [&](auto o, auto i, auto j) { y[o] = pa[i] + pb[j]; });
        break;
      case BinaryOp::kSub:
        for_each_pair(plan, [&](auto o, auto i, auto j) { y[o] = pa[i] - pb[j]; });
        break;
      case BinaryOp::kMul:
        for_each_pair(plan, [&](auto o, auto i, auto j) { y[o] = pa[i] * pb[j]; });
        break;
      case BinaryOp::kDiv:
        for_each_pair(plan, [&](auto o, auto i, auto j) { y[o] = pa[i] / pb[j]; });
        break;
    }
    return make_result(
        plan.out, std::move(out), {a, b}, "binary", [a, b, op, plan](const TensorImpl& res) {
          const T* g = out_grad<T>(res).data();
          const T* va = cdata<T>(a);
          const T* vb = cdata<T>(b);
          if (a.requires_grad()) {
            T* ga = grad_ptr<T>(a);
            switch (op) {
              case BinaryOp::kAdd:
              case BinaryOp::kSub:
                for_each_pair(plan, [&](auto o, auto i, auto) { ga[i] += g[o]; });
                break;
              case BinaryOp::kMul:
                for_each_pair(plan, [&](auto o, auto i, auto j) { ga[i] += g[o] * vb[j]; });
                break;
              case BinaryOp::kDiv:
                for_each_pair(plan, [&](auto o, auto i, auto j) { ga[i] += g[o] / vb[j]; });
                break;
            }
          }
          if (b.requires_grad()) {
            T* gb = grad_ptr<T>(b);
            switch (op) {
              case BinaryOp::kAdd:
                for_each_pair(plan, [&](auto o, auto, auto j) { gb[j] += g[o]; });
                break;
              case BinaryOp::kSub:
                for_each_pair(plan, [&](auto o, auto, auto j) { gb[j] -= g[o]; });
                break;
              case BinaryOp::kMul:
                for_each_pair(plan, [&](auto o, auto i, auto j) { gb[j] += g[o] * va[i]; });
                break;
              case BinaryOp::kDiv:
                for_each_pair(plan, [&](auto o, auto i, auto j) {
                  gb[j] -= g[o] * va[i] / (vb[j] * vb[j]);
                });
                break;
            }
          }
        });
  });
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(BinaryOp::kAdd, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(BinaryOp::kSub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(BinaryOp::kMul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(BinaryOp::kDiv, a, b); }

Tensor scale(const Tensor& x, double factor) {
  return dispatch(x.dtype(), [&]<typename T>() {
    const std::int64_t n = x.numel();
    Buffer out(x.dtype(), static_cast<std::size_t>(n));
    const T f = static_cast<T>(factor);
    const T* px = cdata<T>(x);
    T* y = out.view<T>().data();
    for (std::int64_t i = 0; i < n; ++i) y[i] = px[i] * f;
    return make_result(x.shape(), std::move(out), {x}, "scale",
                       [x, f, n](const TensorImpl& res) {
                         const T* g = out_grad<T>(res).data();
                         T* gx = grad_ptr<T>(x);
                         for (std::int64_t i = 0; i < n; ++i) gx[i] += g[i] * f;
                       });
  });
}

Tensor add_scalar(const Tensor& x, double value) {
  return dispatch(x.dtype(), [&]<typename T>() {
    const std::int64_t n = x.numel();
    Buffer out(x.dtype(), static_cast<std::size_t>(n));
    const T v = static_cast<T>(value);
    const T* px = cdata<T>(x);
    T* y = out.view<T>().data();
    for (std::int64_t i = 0; i < n; ++i) y[i] = px[i] + v;
    return make_result(x.shape(), std::move(out), {x}, "add_scalar",
                       [x, n](const TensorImpl& res) {
                         const T* g = out_grad<T>(res).data();
                         T* gx = grad_ptr<T>(x);
                         for (std::int64_t i = 0; i < n; ++i) gx[i] += g[i];
                       });
  });
}

// =============================== dense maps ================================

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(weight, 2, "linear");
  if (x.dim() < 1 || x.size(-1) != weight.size(0)) {
    throw ShapeError("linear: input " + shape_str(x.shape()) +
                     " does not match weight " + shape_str(weight.shape()));
  }
  detail::check_same_dtype(x, weight, "linear");
  const std::int64_t d_in = weight.size(0);
  const std::int64_t d_out = weight.size(1);
  if (bias.defined()) {
    detail::check_same_dtype(x, bias, "linear");
    if (bias.shape() != Shape{d_out}) {
      throw ShapeError("linear: bias " + shape_str(bias.shape()) + " for d_out " +
                       std::to_string(d_out));
    }
  }
  const std::int64_t rows = d_in == 0 ? 0 : x.numel() / d_in;
  Shape out_shape = x.shape();
  out_shape.back() = d_out;

  return dispatch(x.dtype(), [&]<typename T>() {
    Buffer out(x.dtype(), static_cast<std::size_t>(rows * d_out));
    T* y = out.view<T>().data();
    const T* px = cdata<T>(x);
    const T* pw = cdata<T>(weight);
    const T* pb = bias.defined() ? cdata<T>(bias) : nullptr;
    for (std::int64_t i = 0; i < rows; ++i) {
      T* yi = y + i * d_out;
      if (pb) std::copy(pb, pb + d_out, yi);
      const T* xi = px + i * d_in;
      for (std::int64_t k = 0; k < d_in; ++k) {
        const T xik = xi[k];
        const T* wk = pw + k * d_out;
        for (std::int64_t j = 0; j < d_out; ++j) yi[j] += xik * wk[j];
      }
    }
    return make_result(
        std::move(out_shape), std::move(out), {x, weight, bias}, "linear",
        [x, weight, bias, rows, d_in, d_out](const TensorImpl& res) {
          const T* g = out_grad<T>(res).data();
          const T* px = cdata<T>(x);
          const T* pw = cdata<T>(weight);
          if (x.requires_grad()) {
            T* gx = grad_ptr<T>(x);
            for (std::int64_t i = 0; i < rows; ++i) {
              const T* gi = g + i * d_out;
              T* gxi = gx + i * d_in;
              for (std::int64_t k = 0; k < d_in; ++k) {
                const T* wk = pw + k * d_out;
                T acc = 0;
                for (std::int64_t j = 0; j < d_out; ++j) acc += gi[j] * wk[j];
                gxi[k] += acc;
              }
            }
          }
          if (weight.requires_grad()) {
            T* gw = grad_ptr<T>(weight);
            for (std::int64_t i = 0; i < rows; ++i) {
              const T* gi = g + i * d_out;
              const T* xi = px + i * d_in;
              for (std::int64_t k = 0; k < d_in; ++k) {
                const T xik = xi[k];
                T* gwk = gw + k * d_out;
                for (std::int64_t j = 0; j < d_out; ++j) gwk[j] += xik * gi[j];
              }
            }
          }
          if (bias.defined() && bias.requires_grad()) {
            T* gb = grad_ptr<T>(bias);
            for (std::int64_t i = 0; i < rows; ++i) {
              const T* gi = g + i * d_out;
              for (std::int64_t j = 0; j < d_out; ++j) gb[j] += gi[j];
            }
          }
        });
  });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              const Conv2dOptions& opt) {
  require_rank(x, 4, "conv2d");
  require_rank(weight, 4, "conv2d weight");
  detail::check_same_dtype(x, weight, "conv2d");
  const std::int64_t n = x.size(0), c_in = x.size(1), h = x.size(2), w = x.size(3);
  const std::int64_t c_out = weight.size(0), kh = weight.size(2), kw = weight.size(3);
  const int groups = opt.groups;
  const int s = opt.stride;
  const int p = opt.padding;
  if (groups < 1 || s < 1 || p < 0) throw ShapeError("conv2d: invalid options");
  if (c_in % groups != 0 || c_out % groups != 0) {
    throw ShapeError("conv2d: channels " + std::to_string(c_in) + "->" +
                     std::to_string(c_out) + " not divisible by groups " +
                     std::to_string(groups));
  }
  const std::int64_t cin_g = c_in / groups;
  const std::int64_t cout_g = c_out / groups;
  if (weight.size(1) != cin_g) {
    throw ShapeError("conv2d: weight " + shape_str(weight.shape()) + " vs input " +
                     shape_str(x.shape()) + " with groups " + std::to_string(groups));
  }
  const std::int64_t span_h = h + 2 * p - kh;
  const std::int64_t span_w = w + 2 * p - kw;
  if (span_h < 0 || span_w < 0) {
    throw ShapeError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                     " larger than padded input " + shape_str(x.shape()));
  }
  const std::int64_t oh = span_h / s + 1;
  const std::int64_t ow = span_w / s + 1;
  if (bias.defined()) {
    detail::check_same_dtype(x, bias, "conv2d");
    if (bias.shape() != Shape{c_out}) throw ShapeError("conv2d: bias shape");
  }

  // Output columns ow_i with 0 <= ow_i*s - p + kx < w.
  auto col_range = [=](std::int64_t kx) {
    std::int64_t lo = 0;
    while (lo < ow && lo * s - p + kx < 0) ++lo;
    std::int64_t hi = ow;
    while (hi > lo && (hi - 1) * s - p + kx >= w) --hi;
    return std::pair{lo, hi};
  };

  return dispatch(x.dtype(), [&]<typename T>() {
    Buffer out(x.dtype(), static_cast<std::size_t>(n * c_out * oh * ow));
    T* y = out.view<T>().data();
    const T* px = cdata<T>(x);
    const T* pw = cdata<T>(weight);
    const T* pb = bias.defined() ? cdata<T>(bias) : nullptr;
    for (std::int64_t b = 0; b < n; ++b) {
      for (std::int64_t oc = 0; oc < c_out; ++oc) {
        const std::int64_t g = oc / cout_g;
        T* yo = y + (b * c_out + oc) * oh * ow;
        if (pb) std::fill(yo, yo + oh * ow, pb[oc]);
        for (std::int64_t icg = 0; icg < cin_g; ++icg) {
          const std::int64_t ic = g * cin_g + icg;
          const T* xi = px + (b * c_in + ic) * h * w;
          const T* wk = pw + (oc * cin_g + icg) * kh * kw;
          for (std::int64_t ky = 0; ky < kh; ++ky) {
            for (std::int64_t kx = 0; kx < kw; ++kx) {
              const T wv = wk[ky * kw + kx];
              const auto [lo, hi] = col_range(kx);
              for (std::int64_t oy = 0; oy < oh; ++oy) {
                const std::int64_t iy = oy * s - p + ky;
                if (iy < 0 || iy >= h) continue;
                const T* xrow = xi + iy * w;
                T* yrow = yo + oy * ow;
                for (std::int64_t ox = lo; ox < hi; ++ox) {
                  yrow[ox] += wv * xrow[ox * s - p + kx];
                }
              }
            }
          }
        }
      }
    }
    return make_result(
        Shape{n, c_out, oh, ow}, std::move(out), {x, weight, bias}, "conv2d",
        [=](const TensorImpl& res) {
          const T* g = out_grad<T>(res).data();
          const T* px = cdata<T>(x);
          const T* pw = cdata<T>(weight);
          T* gx = x.requires_grad() ? grad_ptr<T>(x) : nullptr;
          T* gw = weight.requires_grad() ? grad_ptr<T>(weight) : nullptr;
          for (std::int64_t b = 0; b < n; ++b) {
            for (std::int64_t oc = 0; oc < c_out; ++oc) {
              const std::int64_t grp = oc / cout_g;
              const T* go = g + (b * c_out + oc) * oh * ow;
              for (std::int64_t icg = 0; icg < cin_g; ++icg) {
                const std::int64_t ic = grp * cin_g + icg;
                const std::int64_t x_off = (b * c_in + ic) * h * w;
                const std::int64_t w_off = (oc * cin_g + icg) * kh * kw;
                for (std::int64_t ky = 0; ky < kh; ++ky) {
                  for (std::int64_t kx = 0; kx < kw; ++kx) {
                    const T wv = pw[w_off + ky * kw + kx];
                    const auto [lo, hi] = col_range(kx);
                    T acc = 0;
                    for (std::int64_t oy = 0; oy < oh; ++oy) {
                      const std::int64_t iy = oy * s - p + ky;
                      if (iy < 0 || iy >= h) continue;
                      const T* grow = go + oy * ow;
                      const std::int64_t row = x_off + iy * w - p + kx;
                      if (gw) {
                        for (std::int64_t ox = lo; ox < hi; ++ox) {
                          acc += grow[ox] * px[row + ox * s];
                        }
                      }
                      if (gx) {
                        for (std::int64_t ox = lo; ox < hi; ++ox) {
                          gx[row + ox * s] += grow[ox] * wv;
                        }
                      }
                    }
                    if (gw) gw[w_off + ky * kw + kx] += acc;
                  }
                }
              }
            }
          }
          if (bias.defined() && bias.requires_grad()) {
            T* gb = grad_ptr<T>(bias);
            for (std::int64_t b = 0; b < n; ++b) {
              for (std::int64_t oc = 0; oc < c_out; ++oc) {
                const T* go = g + (b * c_out + oc) * oh * ow;
                T acc = 0;
                for (std::int64_t i = 0; i < oh * ow; ++i) acc += go[i];
                gb[oc] += acc;
              }
            }
          }
        });
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  if (x.dim() < 1 || x.size(-1) < 1) {
    throw ShapeError("layer_norm: input " + shape_str(x.shape()));
  }
  const std::int64_t d = x.size(-1);
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw ShapeError("layer_norm: affine params must be [" + std::to_string(d) + "]");
  }
  detail::check_same_dtype(x, gamma, "layer_norm");
  detail::check_same_dtype(x, beta, "layer_norm");
  const std::int64_t rows = x.numel() / d;

  return dispatch(x.dtype(), [&]<typename T>() {
    Buffer out(x.dtype(), static_cast<std::size_t>(x.numel()));
    T* y = out.view<T>().data();
    const T* px = cdata<T>(x);
    const T* pg = cdata<T>(gamma);
    const T* pbeta = cdata<T>(beta);
    std::vector<T> mean_v(static_cast<std::size_t>(rows));
    std::vector<T> rstd_v(static_cast<std::size_t>(rows));
    for (std::int64_t i = 0; i < rows; ++i) {
      const T* xi = px + i * d;
      T m = 0;
      for (std::int64_t j = 0; j < d; ++j) m += xi[j];
      m /= static_cast<T>(d);
      T var = 0;
      for (std::int64_t j = 0; j < d; ++j) var += (xi[j] - m) * (xi[j] - m);
      var /= static_cast<T>(d);
      const T rstd = T(1) / std::sqrt(var + static_cast<T>(eps));
      mean_v[static_cast<std::size_t>(i)] = m;
      rstd_v[static_cast<std::size_t>(i)] = rstd;
      T* yi = y + i * d;
      for (std::int64_t j = 0; j < d; ++j) yi[j] = (xi[j] - m) * rstd * pg[j] + pbeta[j];
    }
    return make_result(
        x.shape(), std::move(out), {x, gamma, beta}, "layer_norm",
        [x, gamma, beta, rows, d, mean_v = std::move(mean_v),
         rstd_v = std::move(rstd_v)](const TensorImpl& res) {
          const T* g = out_grad<T>(res).data();
          const T* px = cdata<T>(x);
          const T* pg = cdata<T>(gamma);
          T* gx = x.requires_grad() ? grad_ptr<T>(x) : nullptr;
          T* gg = gamma.requires_grad() ? grad_ptr<T>(gamma) : nullptr;
          T* gbeta = beta.requires_grad() ? grad_ptr<T>(beta) : nullptr;
          std::vector<T> xhat(static_cast<std::size_t>(d));
          for (std::int64_t i = 0; i < rows; ++i) {
            const T m = mean_v[static_cast<std::size_t>(i)];
            const T rstd = rstd_v[static_cast<std::size_t>(i)];
            const T* xi = px + i * d;
            const T* gi = g + i * d;
            T mean_dxhat = 0, mean_dxhat_xhat = 0;
            for (std::int64_t j = 0; j < d; ++j) {
              const auto uj = static_cast<std::size_t>(j);
              xhat[uj] = (xi[j] - m) * rstd;
              const T dxhat = gi[j] * pg[j];
              mean_dxhat += dxhat;
              mean_dxhat_xhat += dxhat * xhat[uj];
              if (gg) gg[j] += gi[j] * xhat[uj];
              if (gbeta) gbeta[j] += gi[j];
            }
            if (!gx) continue;
            mean_dxhat /= static_cast<T>(d);
            mean_dxhat_xhat /= static_cast<T>(d);
            T* gxi = gx + i * d;
            for (std::int64_t j = 0; j < d; ++j) {
              const T dxhat = gi[j] * pg[j];
              gxi[j] += rstd * (dxhat - mean_dxhat -
                                xhat[static_cast<std::size_t>(j)] * mean_dxhat_xhat);
            }
          }
        });
  });
}

// ============================== data movement ==============================

Tensor reshape(const Tensor& x, Shape shape) {
  std::int64_t known = 1;
  int infer = -1;
  for (std::size_t d = 0; d < shape.size(); ++d) {
    if (shape[d] == -1) {
      if (infer >= 0) throw ShapeError("reshape: more than one -1");
      infer = static_cast<int>(d);
    } else if (shape[d] < 0) {
      throw ShapeError("reshape: negative extent in " + shape_str(shape));
    } else {
      known *= shape[d];
    }
  }
  if (infer >= 0) {
    if (known == 0 || x.numel() % known != 0) {
      throw ShapeError("reshape: cannot infer extent of " + shape_str(shape) +
                       " from " + shape_str(x.shape()));
    }
    shape[static_cast<std::size_t>(infer)] = x.numel() / known;
  }
  if (volume(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  return dispatch(x.dtype(), [&]<typename T>() {
    Buffer out(x.dtype(), static_cast<std::size_t>(x.numel()));
    auto src = x.data<T>();
    std::copy(src.begin(), src.end(), out.view<T>().begin());
    const std::int64_t n = x.numel();
    return make_result(std::move(shape), std::move(out), {x}, "reshape",
                       [x, n](const TensorImpl& res) {
                         const T* g = out_grad<T>(res).data();
                         T* gx = grad_ptr<T>(x);
                         for (std::int64_t i = 0; i < n; ++i) gx[i] += g[i];
                       });
  });
}

Tensor permute(const Tensor& x, const std::vector<int>& perm) {
  const int r = x.dim();
  if (static_cast<int>(perm.size()) != r) {
    throw ShapeError("permute: permutation rank mismatch for " + shape_str(x.shape()));
  }
  std::vector<int> seen(static_cast<std::size_t>(r), 0);
  Shape out_shape(static_cast<std::size_t>(r));
  for (int d = 0; d < r; ++d) {
    const int src = perm[static_cast<std::size_t>(d)];
    if (src < 0 || src >= r || seen[static_cast<std::size_t>(src)]++) {
      throw ShapeError("permute: invalid permutation");
    }
    out_shape[static_cast<std::size_t>(d)] = x.shape()[static_cast<std::size_t>(src)];
  }
  return dispatch(x.dtype(), [&]<typename T>() {
    Buffer out(x.dtype(), static_cast<std::size_t>(x.numel()));
    T* y = out.view<T>().data();
    const T* px = cdata<T>(x);
    for_each_permuted(x.shape(), perm, [&](std::int64_t o, std::int64_t i) { y[o] = px[i]; });
    return make_result(std::move(out_shape), std::move(out), {x}, "permute",
                       [x, perm](const TensorImpl& res) {
                         const T* g = out_grad<T>(res).data();
                         T* gx = grad_ptr<T>(x);
                         for_each_permuted(x.shape(), perm, [&](std::int64_t o, std::int64_t i) {
                           gx[i] += g[o];
                         });
                       });
  });
}

Tensor transpose(const Tensor& x, int axis_a, int axis_b) {
  const int r = x.dim();
  const int a = normalize_axis(axis_a, r, "transpose");
  const int b = normalize_axis(axis_b, r, "transpose");
  std::vector<int> perm(static_cast<std::size_t>(r));
  std::iota(perm.begin(), perm.end(), 0);
  std::swap(perm[static_cast<std::size_t>(a)], perm[static_cast<std::size_t>(b)]);
  return permute(x, perm);
}

Tensor flip(const Tensor& x, int axis) {
  const int a = normalize_axis(axis, x.dim(), "flip");
  const AxisView v = axis_view(x.shape(), a);
  return dispatch(x.dtype(), [&]<typename T>() {
    Buffer out(x.dtype(), static_cast<std::size_t>(x.numel()));
    T* y = out.view<T>().data();
    const T* px = cdata<T>(x);
    auto walk = [v](auto&& f) {
      for (std::int64_t o = 0; o < v.outer; ++o) {
        for (std::int64_t i = 0; i < v.n; ++i) {
          const std::int64_t dst = (o * v.n + i) * v.inner;
          const std::int64_t src = (o * v.n + (v.n - 1 - i)) * v.inner;
          for (std::int64_t k = 0; k < v.inner; ++k) f(dst + k, src + k);
        }
      }
    };
    walk([&](std::int64_t dst, std::int64_t src) { y[dst] = px[src]; });
    return make_result(x.shape(), std::move(out), {x}, "flip",
                       [x, walk](const TensorImpl& res) {
                         const T* g = out_grad<T>(res).data();
                         T* gx = grad_ptr<T>(x);
                         walk([&](std::int64_t dst, std::int64_t src) { gx[src] += g[dst]; });
                       });
  });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const int r = parts[0].dim();
  const int a = normalize_axis(axis, r, "concat");
  Shape out_shape = parts[0].shape();
  out_shape[static_cast<std::size_t>(a)] = 0;
  for (const auto& p : parts) {
    detail::check_same_dtype(parts[0], p, "concat");
    if (p.dim() != r) throw ShapeError("concat: ragged ranks");
    for (int d = 0; d < r; ++d) {
      const auto ud = static_cast<std::size_t>(d);
      if (d != a && p.shape()[ud] != parts[0].shape()[ud]) {
        throw ShapeError("concat: ragged shapes " + shape_str(parts[0].shape()) + " and " +
                         shape_str(p.shape()) + " along axis " + std::to_string(a));
      }
    }
    out_shape[static_cast<std::size_t>(a)] += p.shape()[static_cast<std::size_t>(a)];
  }
  const AxisView vo = axis_view(out_shape, a);
  return dispatch(parts[0].dtype(), [&]<typename T>() {
    Buffer out(parts[0].dtype(), static_cast<std::size_t>(volume(out_shape)));
    T* y = out.view<T>().data();
    std::int64_t offset = 0;
    for (const auto& p : parts) {
      const std::int64_t n = p.shape()[static_cast<std::size_t>(a)];
      const T* src = cdata<T>(p);
      for (std::int64_t o = 0; o < vo.outer; ++o) {
        std::copy(src + o * n * vo.inner, src + (o + 1) * n * vo.inner,
                  y + (o * vo.n + offset) * vo.inner);
      }
      offset += n;
    }
    return make_result(std::move(out_shape), std::move(out), parts, "concat",
                       [parts, a, vo](const TensorImpl& res) {
                         const T* g = out_grad<T>(res).data();
                         std::int64_t offset = 0;
                         for (const auto& p : parts) {
                           const std::int64_t n = p.shape()[static_cast<std::size_t>(a)];
                           if (p.requires_grad()) {
                             T* gp = grad_ptr<T>(p);
                             for (std::int64_t o = 0; o < vo.outer; ++o) {
                               const T* src = g + (o * vo.n + offset) * vo.inner;
                               T* dst = gp + o * n * vo.inner;
                               for (std::int64_t k = 0; k < n * vo.inner; ++k) dst[k] += src[k];
                             }
                           }
                           offset += n;
                         }
                       });
  });
}

Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t length) {
  const int a = normalize_axis(axis, x.dim(), "slice");
  const AxisView v = axis_view(x.shape(), a);
  if (start < 0 || length < 0 || start + length > v.n) {
    throw ShapeError("slice: [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") out of range for axis " +
                     std::to_string(a) + " of " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(a)] = length;
  return dispatch(x.dtype(), [&]<typename T>() {
    Buffer out(x.dtype(), static_cast<std::size_t>(volume(out_shape)));
    T* y = out.view<T>().data();
    const T* px = cdata<T>(x);
    for (std::int64_t o = 0; o < v.outer; ++o) {
      std::copy(px + (o * v.n + start) * v.inner, px + (o * v.n + start + length) * v.inner,
                y + o * length * v.inner);
    }
    return make_result(std::move(out_shape), std::move(out), {x}, "slice",
                       [x, v, start, length](const TensorImpl& res) {
                         const T* g = out_grad<T>(res).data();
                         T* gx = grad_ptr<T>(x);
                         for (std::int64_t o = 0; o < v.outer; ++o) {
                           T* dst = gx + (o * v.n + start) * v.inner;
                           const T* src = g + o * length * v.inner;
                           for (std::int64_t k = 0; k < length * v.inner; ++k) dst[k] += src[k];
                         }
                       });
  });
}

std::vector<Tensor> split(const Tensor& x, int axis, const std::vector<std::int64_t>& sizes) {
  const int a = normalize_axis(axis, x.dim(), "split");
  std::int64_t total = 0;
  for (auto s : sizes) total += s;
  if (total != x.size(a)) {
    throw ShapeError("split: sizes sum to " + std::to_string(total) + " but axis has " +
                     std::to_string(x.size(a)));
  }
  std::vector<Tensor> out;
  std::int64_t start = 0;
  for (auto s : sizes) {
    out.push_back(slice(x, a, start, s));
    start += s;
  }
  return out;
}

Tensor spatial_flatten(const Tensor& x) {
  require_rank(x, 4, "spatial_flatten");
  return reshape(x, {x.size(0), x.size(1) * x.size(2), x.size(3)});
}

// ========================= reductions / resampling =========================

Tensor sum(const Tensor& x) {
  return dispatch(x.dtype(), [&]<typename T>() {
    Buffer out(x.dtype(), 1);
    double acc = 0;
    for (T v : x.data<T>()) acc += v;
    out.view<T>()[0] = static_cast<T>(acc);
    const std::int64_t n = x.numel();
    return make_result({}, std::move(out), {x}, "sum", [x, n](const TensorImpl& res) {
      const T g = out_grad<T>(res)[0];
      T* gx = grad_ptr<T>(x);
      for (std::int64_t i = 0; i < n; ++i) gx[i] += g;
    });
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor mean_axis(const Tensor& x, int axis, bool keepdim) {
  const int a = normalize_axis(axis, x.dim(), "mean_axis");
  const AxisView v = axis_view(x.shape(), a);
  if (v.n == 0) throw ShapeError("mean_axis over empty axis");
  Shape out_shape = x.shape();
  if (keepdim) {
    out_shape[static_cast<std::size_t>(a)] = 1;
  } else {
    out_shape.erase(out_shape.begin() + a);
  }
  return dispatch(x.dtype(), [&]<typename T>() {
    Buffer out(x.dtype(), static_cast<std::size_t>(v.outer * v.inner));
    T* y = out.view<T>().data();
    const T* px = cdata<T>(x);
    const T inv = T(1) / static_cast<T>(v.n);
    for (std::int64_t o = 0; o < v.outer; ++o) {
      T* yo = y + o * v.inner;
      for (std::int64_t i = 0; i < v.n; ++i) {
        const T* xi = px + (o * v.n + i) * v.inner;
        for (std::int64_t k = 0; k < v.inner; ++k) yo[k] += xi[k];
      }
      for (std::int64_t k = 0; k < v.inner; ++k) yo[k] *= inv;
    }
    return make_result(std::move(out_shape), std::move(out), {x}, "mean_axis",
                       [x, v, inv](const TensorImpl& res) {
                         const T* g = out_grad<T>(res).data();
                         T* gx = grad_ptr<T>(x);
                         for (std::int64_t o = 0; o < v.outer; ++o) {
                           for (std::int64_t i = 0; i < v.n; ++i) {
                             T* dst = gx + (o * v.n + i) * v.inner;
                             for (std::int64_t k = 0; k < v.inner; ++k) {
                               dst[k] += g[o * v.inner + k] * inv;
                             }
                           }
                         }
                       });
  });
}

Tensor max_axis(const Tensor& x, int axis, bool keepdim) {
  const int a = normalize_axis(axis, x.dim(), "max_axis");
  const AxisView v = axis_view(x.shape(), a);
  if (v.n == 0) throw ShapeError("max_axis over empty axis");
  Shape out_shape = x.shape();
  if (keepdim) {
    out_shape[static_cast<std::size_t>(a)] = 1;
  } else {
    out_shape.erase(out_shape.begin() + a);
  }
  return dispatch(x.dtype(), [&]<typename T>() {
    Buffer out(x.dtype(), static_cast<std::size_t>(v.outer * v.inner));
    T* y = out.view<T>().data();
    const T* px = cdata<T>(x);
    std::vector<std::int64_t> arg(static_cast<std::size_t>(v.outer * v.inner), 0);
    for (std::int64_t o = 0; o < v.outer; ++o) {
      for (std::int64_t k = 0; k < v.inner; ++k) {
        std::int64_t best = 0;
        T best_v = px[o * v.n * v.inner + k];
        for (std::int64_t i = 1; i < v.n; ++i) {
          const T cand = px[(o * v.n + i) * v.inner + k];
          if (cand > best_v) {
            best_v = cand;
            best = i;
          }
        }
        y[o * v.inner + k] = best_v;
        arg[static_cast<std::size_t>(o * v.inner + k)] = best;
      }
    }
    return make_result(std::move(out_shape), std::move(out), {x}, "max_axis",
                       [x, v, arg = std::move(arg)](const TensorImpl& res) {
                         const T* g = out_grad<T>(res).data();
                         T* gx = grad_ptr<T>(x);
                         for (std::int64_t o = 0; o < v.outer; ++o) {
                           for (std::int64_t k = 0; k < v.inner; ++k) {
                             const std::int64_t idx = o * v.inner + k;
                             const std::int64_t i = arg[static_cast<std::size_t>(idx)];
                             gx[(o * v.n + i) * v.inner + k] += g[idx];
                           }
                         }
                       });
  });
}

Tensor upsample_nearest(const Tensor& x, int factor) {
  require_rank(x, 4, "upsample_nearest");
  if (factor < 1) throw ShapeError("upsample_nearest: factor must be >= 1");
  const std::int64_t planes = x.size(0) * x.size(1);
  const std::int64_t h = x.size(2), w = x.size(3);
  const std::int64_t oh = h * factor, ow = w * factor;
  return dispatch(x.dtype(), [&]<typename T>() {
    Buffer out(x.dtype(), static_cast<std::size_t>(planes * oh * ow));
    T* y = out.view<T>().data();
    const T* px = cdata<T>(x);
    for (std::int64_t p = 0; p < planes; ++p) {
      for (std::int64_t r = 0; r < oh; ++r) {
        for (std::int64_t c = 0; c < ow; ++c) {
          y[(p * oh + r) * ow + c] = px[(p * h + r / factor) * w + c / factor];
        }
      }
    }
    return make_result(Shape{x.size(0), x.size(1), oh, ow}, std::move(out), {x},
                       "upsample_nearest", [=](const TensorImpl& res) {
                         const T* g = out_grad<T>(res).data();
                         T* gx = grad_ptr<T>(x);
                         for (std::int64_t p = 0; p < planes; ++p) {
                           for (std::int64_t r = 0; r < oh; ++r) {
                             for (std::int64_t c = 0; c < ow; ++c) {
                               gx[(p * h + r / factor) * w + c / factor] +=
                                   g[(p * oh + r) * ow + c];
                             }
                           }
                         }
                       });
  });
}

Tensor upsample_bilinear(const Tensor& x, int factor) {
  require_rank(x, 4, "upsample_bilinear");
  if (factor < 1) throw ShapeError("upsample_bilinear: factor must be >= 1");
  const std::int64_t planes = x.size(0) * x.size(1);
  const std::int64_t h = x.size(2), w = x.size(3);
  const std::int64_t oh = h * factor, ow = w * factor;
  const InterpTable th = bilinear_table(h, oh, factor);
  const InterpTable tw = bilinear_table(w, ow, factor);
  return dispatch(x.dtype(), [&]<typename T>() {
    Buffer out(x.dtype(), static_cast<std::size_t>(planes * oh * ow));
    T* y = out.view<T>().data();
    const T* px = cdata<T>(x);
    for (std::int64_t p = 0; p < planes; ++p) {
      const T* xp = px + p * h * w;
      for (std::int64_t r = 0; r < oh; ++r) {
        const auto ur = static_cast<std::size_t>(r);
        const T* row_lo = xp + th.lo[ur] * w;
        const T* row_hi = xp + th.hi[ur] * w;
        const T a_lo = static_cast<T>(th.w_lo[ur]);
        const T a_hi = static_cast<T>(th.w_hi[ur]);
        for (std::int64_t c = 0; c < ow; ++c) {
          const auto uc = static_cast<std::size_t>(c);
          const T b_lo = static_cast<T>(tw.w_lo[uc]);
          const T b_hi = static_cast<T>(tw.w_hi[uc]);
          y[(p * oh + r) * ow + c] =
              a_lo * (b_lo * row_lo[tw.lo[uc]] + b_hi * row_lo[tw.hi[uc]]) +
              a_hi * (b_lo * row_hi[tw.lo[uc]] + b_hi * row_hi[tw.hi[uc]]);
        }
      }
    }
    return make_result(
        Shape{x.size(0), x.size(1), oh, ow}, std::move(out), {x}, "upsample_bilinear",
        [=](const TensorImpl& res) {
          const T* g = out_grad<T>(res).data();
          T* gx = grad_ptr<T>(x);
          for (std::int64_t p = 0; p < planes; ++p) {
            T* gp = gx + p * h * w;
            for (std::int64_t r = 0; r < oh; ++r) {
              const auto ur = static_cast<std::size_t>(r);
              T* row_lo = gp + th.lo[ur] * w;
              T* row_hi = gp + th.hi[ur] * w;
              const T a_lo = static_cast<T>(th.w_lo[ur]);
              const T a_hi = static_cast<T>(th.w_hi[ur]);
              for (std::int64_t c = 0; c < ow; ++c) {
                const auto uc = static_cast<std::size_t>(c);
                const T gv = g[(p * oh + r) * ow + c];
                const T b_lo = static_cast<T>(tw.w_lo[uc]);
                const T b_hi = static_cast<T>(tw.w_hi[uc]);
                row_lo[tw.lo[uc]] += gv * a_lo * b_lo;
                row_lo[tw.hi[uc]] += gv * a_lo * b_hi;
                row_hi[tw.lo[uc]] += gv * a_hi * b_lo;
                row_hi[tw.hi[uc]] += gv * a_hi * b_hi;
              }
            }
          }
        });
  });
}

// =================================== loss ==================================

Tensor cross_entropy_2class(const Tensor& logits, const Tensor& labels) {
  require_rank(logits, 4, "cross_entropy_2class");
  if (logits.size(1) != 2) {
    throw ShapeError("cross_entropy_2class: expected 2 classes, got " +
                     shape_str(logits.shape()));
  }
  const std::int64_t n = logits.size(0), h = logits.size(2), w = logits.size(3);
  if (labels.shape() != Shape{n, h, w}) {
    throw ShapeError("cross_entropy_2class: labels " + shape_str(labels.shape()) +
                     " vs logits " + shape_str(logits.shape()));
  }
  const std::int64_t hw = h * w;
  const std::int64_t count = n * hw;
  if (count == 0) throw ShapeError("cross_entropy_2class: empty input");
  std::vector<std::uint8_t> lab(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    const double v = labels.at(i);
    if (v != 0.0 && v != 1.0) {
      throw NumericError("cross_entropy_2class: label " + std::to_string(v) +
                         " at index " + std::to_string(i) + " is not in {0,1}");
    }
    lab[static_cast<std::size_t>(i)] = v == 1.0 ? 1 : 0;
  }
  return dispatch(logits.dtype(), [&]<typename T>() {
    const T* pl = cdata<T>(logits);
    double acc = 0;
    for (std::int64_t b = 0; b < n; ++b) {
      for (std::int64_t i = 0; i < hw; ++i) {
        const double l0 = pl[(b * 2) * hw + i];
        const double l1 = pl[(b * 2 + 1) * hw + i];
        const double m = std::max(l0, l1);
        const double lse = m + std::log(std::exp(l0 - m) + std::exp(l1 - m));
        acc += lse - (lab[static_cast<std::size_t>(b * hw + i)] ? l1 : l0);
      }
    }
    Buffer out(logits.dtype(), 1);
    out.view<T>()[0] = static_cast<T>(acc / static_cast<double>(count));
    return make_result({}, std::move(out), {logits}, "cross_entropy",
                       [logits, lab = std::move(lab), n, hw, count](const TensorImpl& res) {
                         const T g = out_grad<T>(res)[0] / static_cast<T>(count);
                         const T* pl = cdata<T>(logits);
                         T* gl = grad_ptr<T>(logits);
                         for (std::int64_t b = 0; b < n; ++b) {
                           for (std::int64_t i = 0; i < hw; ++i) {
                             const std::int64_t i0 = (b * 2) * hw + i;
                             const std::int64_t i1 = (b * 2 + 1) * hw + i;
                             const T p1 = stable_sigmoid(pl[i1] - pl[i0]);
                             const T y1 = lab[static_cast<std::size_t>(b * hw + i)] ? T(1) : T(0);
                             gl[i1] += g * (p1 - y1);
                             gl[i0] += g * ((T(1) - p1) - (T(1) - y1));
                           }
                         }
                       });
  });
}

}  // namespace mcd
