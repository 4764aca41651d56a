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
#include <optional>
#include <string>
#include <vector>

#include "mcd/nn.hpp"
#include "mcd/tensor.hpp"

namespace mcd {

// One bi-temporal pair: images [3, H, W] in [0, 1], label [H, W] in {0, 1}.
struct ChangePairSample {
  std::string id;
  Tensor image_a;
  Tensor image_b;
  Tensor label;

  std::int64_t height() const { return label.size(0); }
  std::int64_t width() const { return label.size(1); }
  void validate() const;
};

struct DatasetManifest {
  std::string root;
  std::string split;
  std::vector<std::string> ids;

  std::string split_dir() const;
  std::string path(const std::string& part, const std::string& id) const;  // part: A, B, label
};

struct LoadOptions {
  bool strict_size = false;  // require 256x256 crops
  std::int64_t expected_size = 256;
};

// Scans root/split/{A,B,label}/<id>.png. Ids are sorted; decode is deferred.
DatasetManifest load_dataset(const std::string& root, const std::string& split,
                             const LoadOptions& options = {});

// RGB PNG -> [3, H, W] in [0, 1].
Tensor read_image_tensor(const std::string& path);

ChangePairSample read_sample(const DatasetManifest& manifest, std::size_t index,
                             const LoadOptions& options = {});
void write_sample(const std::string& split_dir, const ChangePairSample& sample);

// Something that yields samples by index.
class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual std::size_t size() const = 0;
  virtual ChangePairSample get(std::size_t index) const = 0;
};

class MemorySource : public SampleSource {
 public:
  explicit MemorySource(std::vector<ChangePairSample> samples) : samples_(std::move(samples)) {}
  std::size_t size() const override { return samples_.size(); }
  ChangePairSample get(std::size_t index) const override { return samples_.at(index); }
  const std::vector<ChangePairSample>& samples() const { return samples_; }

 private:
  std::vector<ChangePairSample> samples_;
};

// Decodes on first access and keeps the result.
class DiskSource : public SampleSource {
 public:
  explicit DiskSource(DatasetManifest manifest, LoadOptions options = {});
  std::size_t size() const override { return manifest_.ids.size(); }
  ChangePairSample get(std::size_t index) const override;
  const DatasetManifest& manifest() const { return manifest_; }

 private:
  DatasetManifest manifest_;
  LoadOptions options_;
  mutable std::vector<std::optional<ChangePairSample>> cache_;
};

struct SyntheticOptions {
  std::uint64_t seed = 7;
  std::int64_t count = 64;
  std::int64_t size = 64;
  double density = 0.1;  // expected changed-pixel fraction
  std::int64_t val_count = 16;

  void validate() const;
};

// Pure function of the options. Train pairs come first in the stream, then
// validation pairs.
struct SyntheticDataset {
  std::vector<ChangePairSample> train;
  std::vector<ChangePairSample> val;
};
SyntheticDataset generate_synthetic(const SyntheticOptions& options);

// Writes root/{train,val}/{A,B,label}/<id>.png and root/manifest.txt.
void write_synthetic(const std::string& root, const SyntheticOptions& options);

struct Batch {
  std::vector<std::string> ids;
  Tensor image_a;  // [N, 3, H, W]
  Tensor image_b;
  Tensor label;  // [N, H, W]
  std::int64_t size() const { return static_cast<std::int64_t>(ids.size()); }
};

Batch collate(const std::vector<ChangePairSample>& samples);

// Flips the sample's images and label together.
ChangePairSample flip_sample(const ChangePairSample& sample, bool horizontal, bool vertical);

struct BatchOptions {
  std::int64_t batch_size = 8;
  bool shuffle = true;
  bool augment = false;  // random synchronized horizontal/vertical flips
};

// One epoch over a source. Order and flips depend only on epoch_seed.
class BatchIterator {
 public:
  BatchIterator(const SampleSource& source, const BatchOptions& options, std::uint64_t epoch_seed);

  bool next(Batch& batch);
  std::size_t batch_count() const;
  const std::vector<std::size_t>& order() const { return order_; }

 private:
  const SampleSource& source_;
  BatchOptions options_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

}  // namespace mcd
