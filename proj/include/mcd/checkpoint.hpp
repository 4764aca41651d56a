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

#include <string>
#include <utility>
#include <vector>

#include "mcd/kv.hpp"
#include "mcd/tensor.hpp"

namespace mcd {

// Little-endian binary file:
//   "MCDCKPT\0" | u32 version | u64 text length | key = value text |
//   records of (u32 name length, name, u8 dtype, u32 rank, u64 dims[rank], raw data)
// The text carries the record count under `records`.
struct Checkpoint {
  KeyValues meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

class FormatError : public Error {
 public:
  using Error::Error;
};

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace mcd
