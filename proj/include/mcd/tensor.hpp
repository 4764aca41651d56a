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

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

namespace mcd {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Geometry of an operation's inputs is invalid.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A value that must be finite or inside a domain is not.
class NumericError : public Error {
 public:
  using Error::Error;
};

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1 };

const char* dtype_name(DType dtype);
DType parse_dtype(const std::string& name);

// Process-wide precision used by every factory that is not given an explicit
// dtype. Gradient checks switch this to kF64.
DType default_dtype();
void set_default_dtype(DType dtype);

class DTypeGuard {
 public:
  explicit DTypeGuard(DType dtype) : saved_(default_dtype()) {
    set_default_dtype(dtype);
  }
  ~DTypeGuard() { set_default_dtype(saved_); }
  DTypeGuard(const DTypeGuard&) = delete;
  DTypeGuard& operator=(const DTypeGuard&) = delete;

 private:
  DType saved_;
};

// Thread-local switch for graph recording.
bool grad_enabled();
void set_grad_enabled(bool enabled);

class NoGradGuard {
 public:
  NoGradGuard() : saved_(grad_enabled()) { set_grad_enabled(false); }
  ~NoGradGuard() { set_grad_enabled(saved_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

using Shape = std::vector<std::int64_t>;

std::int64_t volume(const Shape& shape);
std::string shape_str(const Shape& shape);

// Calls f.template operator()<T>() with T matching the dtype.
template <typename F>
decltype(auto) dispatch(DType dtype, F&& f) {
  if (dtype == DType::kF64) return f.template operator()<double>();
  return f.template operator()<float>();
}

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, double> ? DType::kF64 : DType::kF32;
}

// Contiguous zero-initialized storage of one floating-point type.
class Buffer {
 public:
  Buffer() = default;
  Buffer(DType dtype, std::size_t n);

  DType dtype() const;
  std::size_t size() const;
  bool empty() const { return size() == 0; }

  template <typename T>
  std::span<T> view() {
    return std::span<T>(std::get<std::vector<T>>(data_));
  }
  template <typename T>
  std::span<const T> view() const {
    return std::span<const T>(std::get<std::vector<T>>(data_));
  }

  double get(std::size_t i) const;
  void set(std::size_t i, double v);
  void clear() { data_ = std::vector<float>{}; }

 private:
  std::variant<std::vector<float>, std::vector<double>> data_;
};

struct TensorImpl;

// Receives the finished output (whose grad is populated) and accumulates into
// the grads of the inputs it captured.
using BackwardFn = std::function<void(const TensorImpl& out)>;

struct Node {
  const char* name = "";
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  BackwardFn backward;
};

struct TensorImpl {
  Shape shape;
  Buffer data;
  Buffer grad;
  bool requires_grad = false;
  std::shared_ptr<Node> grad_fn;

  // Allocates a zero gradient on first use.
  template <typename T>
  std::span<T> grad_view() {
    if (grad.empty() && data.size() > 0) grad = Buffer(data.dtype(), data.size());
    return grad.view<T>();
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, DType dtype = default_dtype());
  static Tensor full(Shape shape, double value, DType dtype = default_dtype());
  static Tensor from_values(Shape shape, const std::vector<double>& values,
                            DType dtype = default_dtype());
  static Tensor scalar(double value, DType dtype = default_dtype());

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int dim() const { return static_cast<int>(shape().size()); }
  std::int64_t size(int axis) const;
  std::int64_t numel() const;
  DType dtype() const;

  template <typename T>
  std::span<T> data() {
    return impl_->data.view<T>();
  }
  template <typename T>
  std::span<const T> data() const {
    return std::as_const(impl_->data).view<T>();
  }

  double item() const;
  double at(std::int64_t flat_index) const;
  // Writes through to the storage; used for parameter perturbation and
  // initialization, never on tensors that are part of a live graph.
  void set(std::int64_t flat_index, double value);
  std::vector<double> values() const;

  bool requires_grad() const;
  Tensor& requires_grad_(bool value = true);
  bool is_leaf() const;
  bool has_grad() const;
  // Gradient as a detached tensor (zeros when none has been accumulated).
  Tensor grad() const;
  std::vector<double> grad_values() const;
  void zero_grad();

  // Reverse-mode sweep from a scalar root. Leaf gradients accumulate across
  // calls; intermediate gradients are released once consumed.
  void backward() const;

  // Deep copy detached from any graph.
  Tensor clone() const;
  Tensor detach() const { return clone(); }
  Tensor to(DType dtype) const;
  void copy_from(const Tensor& other);

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

namespace detail {

// Wraps a freshly computed buffer as a tensor and, when recording is on and
// any input requires grad, attaches the backward rule.
Tensor make_result(Shape shape, Buffer data, const std::vector<Tensor>& inputs,
                   const char* name, BackwardFn backward);

void check_same_dtype(const Tensor& a, const Tensor& b, const char* op);

}  // namespace detail

}  // namespace mcd
