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

// Batch of {0,1} maps, row-major [batch, height, width].
struct BinaryMap {
  std::int64_t batch = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::uint8_t> values;

  BinaryMap() = default;
  BinaryMap(std::int64_t b, std::int64_t h, std::int64_t w)
      : batch(b), height(h), width(w), values(static_cast<std::size_t>(b * h * w), 0) {}

  std::int64_t size() const { return batch * height * width; }
  std::uint8_t& at(std::int64_t b, std::int64_t y, std::int64_t x) {
    return values[static_cast<std::size_t>((b * height + y) * width + x)];
  }
  std::uint8_t at(std::int64_t b, std::int64_t y, std::int64_t x) const {
    return values[static_cast<std::size_t>((b * height + y) * width + x)];
  }
  std::int64_t count_ones() const;

  // From a [B, H, W] tensor whose entries are 0 or 1.
  static BinaryMap from_tensor(const Tensor& t);
  Tensor to_tensor(DType dtype = default_dtype()) const;
};

}  // namespace mcd
