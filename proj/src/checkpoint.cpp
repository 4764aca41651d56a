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
#include "mcd/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mcd {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'M', 'C', 'D', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

class Reader {
 public:
  Reader(std::istream& in, const std::string& path) : in_(in), path_(path) {}

  void bytes(void* dst, std::size_t n, const char* what) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw FormatError("checkpoint " + path_ + " is truncated while reading " + what);
    }
  }
  template <typename T>
  T get(const char* what) {
    T v{};
    bytes(&v, sizeof(T), what);
    return v;
  }

 private:
  std::istream& in_;
  std::string path_;
};

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  KeyValues meta = checkpoint.meta;
  meta["records"] = std::to_string(checkpoint.tensors.size());
  const std::string text = format_key_values(meta);

  // Write to a side file first so an interrupted save never clobbers the
  // previous checkpoint.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint: " + path);
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : checkpoint.tensors) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      put<std::uint8_t>(out, t.dtype() == DType::kF64 ? 1 : 0);
      put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim()));
      for (auto d : t.shape()) put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
      dispatch(t.dtype(), [&]<typename T>() {
        const auto data = t.data<T>();
        out.write(reinterpret_cast<const char*>(data.data()),
                  static_cast<std::streamsize>(data.size_bytes()));
      });
    }
    if (!out) throw Error("error while writing checkpoint: " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw Error("cannot move checkpoint into place: " + path);
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint: " + path);
  Reader r(in, path);
  char magic[8];
  r.bytes(magic, sizeof(magic), "magic");
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw FormatError(path + " is not a checkpoint (bad magic bytes)");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint " + path + " has version " + std::to_string(version) +
                      ", this build reads version " + std::to_string(kCheckpointVersion));
  }
  const auto text_len = r.get<std::uint64_t>("header length");
  if (text_len > (1u << 24)) throw FormatError("checkpoint " + path + " has an implausible header");
  std::string text(text_len, '\0');
  r.bytes(text.data(), text.size(), "header");

  Checkpoint ck;
  ck.meta = parse_key_values(text, path);
  const long long records = kv_int(ck.meta, "records", -1);
  if (records < 0) throw FormatError("checkpoint " + path + " header lacks a record count");
  ck.meta.erase("records");
  for (long long i = 0; i < records; ++i) {
    const auto name_len = r.get<std::uint32_t>("record name length");
    if (name_len > 4096) throw FormatError("checkpoint " + path + " has a corrupt record name");
    std::string name(name_len, '\0');
    r.bytes(name.data(), name.size(), "record name");
    const auto dtype_code = r.get<std::uint8_t>("record dtype");
    if (dtype_code > 1) throw FormatError("checkpoint " + path + ": record " + name + " has unknown dtype");
    const DType dtype = dtype_code == 1 ? DType::kF64 : DType::kF32;
    const auto rank = r.get<std::uint32_t>("record rank");
    if (rank > 8) throw FormatError("checkpoint " + path + ": record " + name + " has rank " + std::to_string(rank));
    Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto d = r.get<std::uint64_t>("record dims");
      if (d > (1ull << 32)) throw FormatError("checkpoint " + path + ": record " + name + " has a corrupt shape");
      shape.push_back(static_cast<std::int64_t>(d));
    }
    Tensor t = Tensor::zeros(shape, dtype);
    dispatch(dtype, [&]<typename T>() {
      auto data = t.data<T>();
      r.bytes(data.data(), data.size_bytes(), ("data of " + name).c_str());
    });
    ck.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ck;
}

}  // namespace mcd
