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
#include "mcd/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace mcd {
namespace {

DType g_default_dtype = DType::kF32;
thread_local bool t_grad_enabled = true;

}  // namespace

const char* dtype_name(DType dtype) {
  return dtype == DType::kF64 ? "f64" : "f32";
}

DType parse_dtype(const std::string& name) {
  if (name == "f32" || name == "float32") return DType::kF32;
  if (name == "f64" || name == "float64") return DType::kF64;
  throw Error("unknown precision `" + name + "` (expected f32 or f64)");
}

DType default_dtype() { return g_default_dtype; }
void set_default_dtype(DType dtype) { g_default_dtype = dtype; }

bool grad_enabled() { return t_grad_enabled; }
void set_grad_enabled(bool enabled) { t_grad_enabled = enabled; }

std::int64_t volume(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Buffer::Buffer(DType dtype, std::size_t n) {
  if (dtype == DType::kF64) {
    data_ = std::vector<double>(n, 0.0);
  } else {
    data_ = std::vector<float>(n, 0.0f);
  }
}

DType Buffer::dtype() const {
  return std::holds_alternative<std::vector<double>>(data_) ? DType::kF64
                                                            : DType::kF32;
}

std::size_t Buffer::size() const {
  return std::visit([](const auto& v) { return v.size(); }, data_);
}

double Buffer::get(std::size_t i) const {
  return std::visit([i](const auto& v) { return static_cast<double>(v[i]); },
                    data_);
}

void Buffer::set(std::size_t i, double value) {
  std::visit(
      [i, value](auto& v) {
        using T = typename std::decay_t<decltype(v)>::value_type;
        v[i] = static_cast<T>(value);
      },
      data_);
}

Tensor Tensor::zeros(Shape shape, DType dtype) {
  for (auto e : shape) {
    if (e < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->data = Buffer(dtype, static_cast<std::size_t>(volume(shape)));
  impl->shape = std::move(shape);
  return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  Tensor t = zeros(std::move(shape), dtype);
  dispatch(dtype, [&]<typename T>() {
    for (auto& x : t.data<T>()) x = static_cast<T>(value);
  });
  return t;
}

Tensor Tensor::from_values(Shape shape, const std::vector<double>& values,
                           DType dtype) {
  if (volume(shape) != static_cast<std::int64_t>(values.size())) {
    throw ShapeError("from_values: shape " + shape_str(shape) + " holds " +
                     std::to_string(volume(shape)) + " elements, got " +
                     std::to_string(values.size()));
  }
  Tensor t = zeros(std::move(shape), dtype);
  dispatch(dtype, [&]<typename T>() {
    auto d = t.data<T>();
    for (std::size_t i = 0; i < values.size(); ++i) d[i] = static_cast<T>(values[i]);
  });
  return t;
}

Tensor Tensor::scalar(double value, DType dtype) {
  return full({}, value, dtype);
}

const Shape& Tensor::shape() const { return impl_->shape; }

std::int64_t Tensor::size(int axis) const {
  const int n = dim();
  if (axis < 0) axis += n;
  if (axis < 0 || axis >= n) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     shape_str(shape()));
  }
  return shape()[static_cast<std::size_t>(axis)];
}

std::int64_t Tensor::numel() const { return volume(shape()); }
DType Tensor::dtype() const { return impl_->data.dtype(); }

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  }
  return impl_->data.get(0);
}

double Tensor::at(std::int64_t i) const {
  return impl_->data.get(static_cast<std::size_t>(i));
}

void Tensor::set(std::int64_t i, double value) {
  impl_->data.set(static_cast<std::size_t>(i), value);
}

std::vector<double> Tensor::values() const {
  std::vector<double> out(static_cast<std::size_t>(numel()));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = impl_->data.get(i);
  return out;
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::requires_grad_(bool value) {
  if (!is_leaf()) {
    throw Error("requires_grad_ is only valid on leaf tensors");
  }
  impl_->requires_grad = value;
  if (!value) impl_->grad.clear();
  return *this;
}

bool Tensor::is_leaf() const { return impl_->grad_fn == nullptr; }

bool Tensor::has_grad() const { return !impl_->grad.empty(); }

Tensor Tensor::grad() const {
  Tensor g = zeros(shape(), dtype());
  if (has_grad()) {
    dispatch(dtype(), [&]<typename T>() {
      auto src = std::as_const(impl_->grad).view<T>();
      std::copy(src.begin(), src.end(), g.data<T>().begin());
    });
  }
  return g;
}

std::vector<double> Tensor::grad_values() const { return grad().values(); }

void Tensor::zero_grad() { impl_->grad.clear(); }

void Tensor::backward() const {
  if (numel() != 1) {
    throw ShapeError("backward() needs a scalar root, got shape " +
                     shape_str(shape()));
  }
  if (!requires_grad()) {
    throw Error("backward() on a tensor that does not require grad");
  }

  // Post-order DFS gives a topological order with inputs before outputs.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    const auto& fn = node->grad_fn;
    if (fn && next < fn->inputs.size()) {
      TensorImpl* child = fn->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  dispatch(dtype(), [&]<typename T>() { impl_->grad_view<T>()[0] += T(1); });
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    if (!node->grad_fn) continue;
    if (!node->grad.empty()) node->grad_fn->backward(*node);
    node->grad.clear();
  }
}

Tensor Tensor::clone() const {
  Tensor out = zeros(shape(), dtype());
  out.impl_->data = impl_->data;
  return out;
}

Tensor Tensor::to(DType target) const {
  if (target == dtype()) return clone();
  Tensor out = zeros(shape(), target);
  for (std::int64_t i = 0; i < numel(); ++i) out.set(i, at(i));
  return out;
}

void Tensor::copy_from(const Tensor& other) {
  if (other.shape() != shape()) {
    throw ShapeError("copy_from: " + shape_str(other.shape()) + " into " +
                     shape_str(shape()));
  }
  if (other.dtype() == dtype()) {
    impl_->data = other.impl_->data;
  } else {
    for (std::int64_t i = 0; i < numel(); ++i) set(i, other.at(i));
  }
}

namespace detail {

Tensor make_result(Shape shape, Buffer data, const std::vector<Tensor>& inputs,
                   const char* name, BackwardFn backward) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      auto node = std::make_shared<Node>();
      node->name = name;
      for (const auto& in : inputs) {
        if (in.defined()) node->inputs.push_back(in.impl_ptr());
      }
      node->backward = std::move(backward);
      impl->grad_fn = std::move(node);
      impl->requires_grad = true;
    }
  }
  return Tensor(std::move(impl));
}

void check_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype()) {
    throw Error(std::string(op) + ": mixed dtypes " + dtype_name(a.dtype()) +
                " and " + dtype_name(b.dtype()));
  }
}

}  // namespace detail
}  // namespace mcd
