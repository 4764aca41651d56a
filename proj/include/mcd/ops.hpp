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
#include <vector>

#include "mcd/tensor.hpp"

namespace mcd {

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

enum class UnaryOp {
  kNeg,
  kExp,
  kExpm1,
  kLog,
  kSigmoid,
  kSilu,
  kSoftplus,
  kRelu,
  kTanh,
  kSquare,
};

enum class BinaryOp { kAdd, kSub, kMul, kDiv };

Tensor unary(UnaryOp op, const Tensor& x);
Tensor neg(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor expm1(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor silu(const Tensor& x);
// Numerically stable log(1 + e^x).
Tensor softplus(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor square(const Tensor& x);

// Numpy-style broadcasting: trailing axes aligned, extents equal or 1.
Shape broadcast_shape(const Shape& a, const Shape& b);
Tensor binary(BinaryOp op, const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& x) { return neg(x); }

// ---------------------------------------------------------------------------
// Dense maps
// ---------------------------------------------------------------------------

// y = x W + bias over the last axis. x: [..., d_in], W: [d_in, d_out],
// bias: [d_out] or undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
  int groups = 1;
};

// Cross-correlation. x: [N, C_in, H, W], weight: [C_out, C_in/groups, kH, kW],
// bias: [C_out] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              const Conv2dOptions& options);

// Normalizes over the last axis, then applies gamma/beta of shape [d].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

// ---------------------------------------------------------------------------
// Data movement
// ---------------------------------------------------------------------------

// One extent may be -1 and is inferred.
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& perm);
Tensor transpose(const Tensor& x, int axis_a, int axis_b);
Tensor flip(const Tensor& x, int axis);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t length);
std::vector<Tensor> split(const Tensor& x, int axis,
                          const std::vector<std::int64_t>& sizes);
// [B, H, W, C] -> [B, H*W, C] in row-major token order.
Tensor spatial_flatten(const Tensor& x);

// ---------------------------------------------------------------------------
// Reductions, pooling, resampling
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mean_axis(const Tensor& x, int axis, bool keepdim = false);
// Gradient goes to the first maximal element in scan order.
Tensor max_axis(const Tensor& x, int axis, bool keepdim = false);

// NCHW, integer factor.
Tensor upsample_nearest(const Tensor& x, int factor);
// NCHW, integer factor, half-pixel centers with edge clamping.
Tensor upsample_bilinear(const Tensor& x, int factor);

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

// logits: [N, 2, H, W]; labels: [N, H, W] holding 0 or 1. Mean over pixels.
Tensor cross_entropy_2class(const Tensor& logits, const Tensor& labels);

}  // namespace mcd
