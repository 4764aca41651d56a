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
#include "mcd/datasets.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>

#include "mcd/image_io.hpp"
#include "mcd/kv.hpp"
#include "mcd/ops.hpp"

namespace fs = std::filesystem;

namespace mcd {
namespace {

constexpr const char* kParts[] = {"A", "B", "label"};

std::set<std::string> png_stems(const fs::path& dir) {
  std::set<std::string> stems;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") {
      stems.insert(entry.path().stem().string());
    }
  }
  return stems;
}

Tensor image_to_tensor(const Image& img) {
  const std::int64_t h = img.height, w = img.width;
  Tensor t = Tensor::zeros({3, h, w});
  dispatch(t.dtype(), [&]<typename T>() {
    auto out = t.data<T>();
    for (std::int64_t c = 0; c < 3; ++c) {
      for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
          out[static_cast<std::size_t>((c * h + y) * w + x)] =
              static_cast<T>(img.at(static_cast<int>(x), static_cast<int>(y))[c] / 255.0);
        }
      }
    }
  });
  return t;
}

Image tensor_to_image(const Tensor& t) {
  const std::int64_t h = t.size(1), w = t.size(2);
  Image img(static_cast<int>(w), static_cast<int>(h), 3);
  for (std::int64_t c = 0; c < 3; ++c) {
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        const double v = std::clamp(t.at((c * h + y) * w + x), 0.0, 1.0);
        img.at(static_cast<int>(x), static_cast<int>(y))[c] =
            static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }
  return img;
}

std::string pad_id(std::int64_t i) {
  std::string s = std::to_string(i);
  return std::string(s.size() < 4 ? 4 - s.size() : 0, '0') + s;
}

// Planar float image used while drawing.
struct Canvas {
  std::int64_t size;
  std::vector<double> px;  // [3, size, size]
  explicit Canvas(std::int64_t s) : size(s), px(static_cast<std::size_t>(3 * s * s), 0.0) {}
  double& at(int c, std::int64_t y, std::int64_t x) {
    return px[static_cast<std::size_t>((c * size + y) * size + x)];
  }
};

struct Shape2D {
  bool ellipse = false;
  double cx = 0, cy = 0, half_w = 0, half_h = 0;
  std::array<double, 3> color{};

  bool contains(std::int64_t x, std::int64_t y) const {
    const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
    if (ellipse) return (dx * dx) / (half_w * half_w) + (dy * dy) / (half_h * half_h) <= 1.0;
    return std::abs(dx) <= half_w && std::abs(dy) <= half_h;
  }
};

double quantize(double v) { return std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

Shape2D random_shape(Rng& rng, std::int64_t size, const std::array<double, 3>& base) {
  Shape2D s;
  s.ellipse = rng.bernoulli(0.5);
  const double lo = size / 8.0, hi = size / 4.0;
  const double w = rng.uniform(lo, hi), h = rng.uniform(lo, hi);
  s.half_w = w / 2;
  s.half_h = h / 2;
  s.cx = rng.uniform(s.half_w, size - s.half_w);
  s.cy = rng.uniform(s.half_h, size - s.half_h);
  // Keep shapes clearly distinguishable from the background.
  for (int attempt = 0; attempt < 16; ++attempt) {
    double dist = 0;
    for (int c = 0; c < 3; ++c) {
      s.color[static_cast<std::size_t>(c)] = rng.uniform(0.0, 1.0);
      dist += std::abs(s.color[static_cast<std::size_t>(c)] - base[static_cast<std::size_t>(c)]);
    }
    if (dist >= 0.6) break;
  }
  return s;
}

void paint(Canvas& canvas, const Shape2D& s) {
  for (std::int64_t y = 0; y < canvas.size; ++y) {
    for (std::int64_t x = 0; x < canvas.size; ++x) {
      if (!s.contains(x, y)) continue;
      for (int c = 0; c < 3; ++c) canvas.at(c, y, x) = s.color[static_cast<std::size_t>(c)];
    }
  }
}

Tensor canvas_tensor(const Canvas& canvas) {
  std::vector<double> v(canvas.px.size());
  std::transform(canvas.px.begin(), canvas.px.end(), v.begin(), quantize);
  return Tensor::from_values({3, canvas.size, canvas.size}, v);
}

ChangePairSample synthesize_pair(Rng& rng, const SyntheticOptions& opt, const std::string& id) {
  const std::int64_t n = opt.size;
  std::array<double, 3> base{};
  for (auto& b : base) b = rng.uniform(0.25, 0.55);

  // Background: two oriented sinusoids plus fine noise.
  Canvas a(n);
  std::array<double, 4> wave{};
  for (auto& w : wave) w = rng.uniform(0.0, 2 * std::numbers::pi);
  const double f1 = rng.uniform(2.0, 6.0) / static_cast<double>(n);
  const double f2 = rng.uniform(2.0, 6.0) / static_cast<double>(n);
  for (std::int64_t y = 0; y < n; ++y) {
    for (std::int64_t x = 0; x < n; ++x) {
      const double tex = 0.06 * std::sin(2 * std::numbers::pi * f1 * (x * std::cos(wave[0]) + y * std::sin(wave[0])) + wave[1]) +
                         0.06 * std::sin(2 * std::numbers::pi * f2 * (x * std::cos(wave[2]) + y * std::sin(wave[2])) + wave[3]);
      for (int c = 0; c < 3; ++c) {
        a.at(c, y, x) = base[static_cast<std::size_t>(c)] + tex + rng.uniform(-0.04, 0.04);
      }
    }
  }

  // Shapes present in both images.
  const std::int64_t statics = rng.uniform_int(1, 4);
  for (std::int64_t i = 0; i < statics; ++i) paint(a, random_shape(rng, n, base));
  Canvas b = a;

  // Expected footprint of one shape: sides uniform in [n/8, n/4], half of
  // them ellipses.
  const double mean_side = 3.0 * static_cast<double>(n) / 16.0;
  const double mean_area = mean_side * mean_side * (1.0 + std::numbers::pi / 4.0) / 2.0;
  const auto changes =
      static_cast<std::int64_t>(std::lround(opt.density * static_cast<double>(n * n) / mean_area));
  std::vector<Shape2D> changed;
  for (std::int64_t i = 0; i < changes; ++i) {
    Shape2D s = random_shape(rng, n, base);
    if (rng.bernoulli(0.5)) {
      paint(b, s);  // added
    } else {
      paint(a, s);  // removed
    }
    changed.push_back(s);
  }

  // Global illumination change on the second image.
  const double jitter = 1.0 + rng.uniform(-0.08, 0.08);
  for (auto& v : b.px) v *= jitter;

  std::vector<double> label(static_cast<std::size_t>(n * n), 0.0);
  for (std::int64_t y = 0; y < n; ++y) {
    for (std::int64_t x = 0; x < n; ++x) {
      for (const auto& s : changed) {
        if (s.contains(x, y)) {
          label[static_cast<std::size_t>(y * n + x)] = 1.0;
          break;
        }
      }
    }
  }
  return ChangePairSample{id, canvas_tensor(a), canvas_tensor(b), Tensor::from_values({n, n}, label)};
}

}  // namespace

void ChangePairSample::validate() const {
  if (image_a.dim() != 3 || image_a.size(0) != 3 || image_a.shape() != image_b.shape() ||
      label.dim() != 2 || label.size(0) != image_a.size(1) || label.size(1) != image_a.size(2)) {
    throw ShapeError("sample " + id + ": inconsistent shapes A" + shape_str(image_a.shape()) +
                     " B" + shape_str(image_b.shape()) + " label" + shape_str(label.shape()));
  }
  for (std::int64_t i = 0; i < label.numel(); ++i) {
    const double v = label.at(i);
    if (v != 0.0 && v != 1.0) throw NumericError("sample " + id + ": label value outside {0,1}");
  }
}

std::string DatasetManifest::split_dir() const { return (fs::path(root) / split).string(); }

std::string DatasetManifest::path(const std::string& part, const std::string& id) const {
  return (fs::path(root) / split / part / (id + ".png")).string();
}

DatasetManifest load_dataset(const std::string& root, const std::string& split,
                             const LoadOptions& options) {
  DatasetManifest m{root, split, {}};
  const fs::path dir = fs::path(root) / split;
  std::array<std::set<std::string>, 3> stems;
  for (std::size_t p = 0; p < 3; ++p) {
    const fs::path sub = dir / kParts[p];
    if (!fs::is_directory(sub)) throw Error("dataset directory not found: " + sub.string());
    stems[p] = png_stems(sub);
  }
  for (std::size_t p = 0; p < 3; ++p) {
    for (const auto& id : stems[p]) {
      for (std::size_t q = 0; q < 3; ++q) {
        if (!stems[q].count(id)) {
          throw Error("dataset " + dir.string() + ": id `" + id + "` has " + kParts[p] +
                      " but no " + kParts[q] + " image");
        }
      }
    }
  }
  m.ids.assign(stems[0].begin(), stems[0].end());  // std::set keeps them sorted
  if (m.ids.empty()) spdlog::warn("dataset {} has no samples", dir.string());
  if (options.strict_size) {
    for (std::size_t i = 0; i < m.ids.size(); ++i) read_sample(m, i, options);
  }
  return m;
}

Tensor read_image_tensor(const std::string& path) { return image_to_tensor(read_png(path, 3)); }

ChangePairSample read_sample(const DatasetManifest& manifest, std::size_t index,
                             const LoadOptions& options) {
  const std::string& id = manifest.ids.at(index);
  const Image a = read_png(manifest.path("A", id), 3);
  const Image b = read_png(manifest.path("B", id), 3);
  const Image l = read_png(manifest.path("label", id), 3);
  for (const Image* img : {&a, &b, &l}) {
    if (img->width != a.width || img->height != a.height) {
      throw ShapeError("sample " + id + ": A, B and label sizes differ");
    }
  }
  if (options.strict_size && (a.width != options.expected_size || a.height != options.expected_size)) {
    throw ShapeError("sample " + id + ": expected " + std::to_string(options.expected_size) + "x" +
                     std::to_string(options.expected_size) + ", got " + std::to_string(a.width) +
                     "x" + std::to_string(a.height));
  }
  std::vector<double> label(static_cast<std::size_t>(a.width) * a.height);
  for (int y = 0; y < l.height; ++y) {
    for (int x = 0; x < l.width; ++x) {
      const auto* p = l.at(x, y);
      label[static_cast<std::size_t>(y) * l.width + x] = (p[0] | p[1] | p[2]) ? 1.0 : 0.0;
    }
  }
  return ChangePairSample{id, image_to_tensor(a), image_to_tensor(b),
                          Tensor::from_values({l.height, l.width}, label)};
}

void write_sample(const std::string& split_dir, const ChangePairSample& sample) {
  for (const char* part : kParts) fs::create_directories(fs::path(split_dir) / part);
  write_png((fs::path(split_dir) / "A" / (sample.id + ".png")).string(), tensor_to_image(sample.image_a));
  write_png((fs::path(split_dir) / "B" / (sample.id + ".png")).string(), tensor_to_image(sample.image_b));
  Image label(static_cast<int>(sample.width()), static_cast<int>(sample.height()), 1);
  for (std::int64_t i = 0; i < sample.label.numel(); ++i) {
    label.pixels[static_cast<std::size_t>(i)] = sample.label.at(i) != 0.0 ? 255 : 0;
  }
  write_png((fs::path(split_dir) / "label" / (sample.id + ".png")).string(), label);
}

DiskSource::DiskSource(DatasetManifest manifest, LoadOptions options)
    : manifest_(std::move(manifest)), options_(options), cache_(manifest_.ids.size()) {}

ChangePairSample DiskSource::get(std::size_t index) const {
  auto& slot = cache_.at(index);
  if (!slot) slot = read_sample(manifest_, index, options_);
  return *slot;
}

void SyntheticOptions::validate() const {
  if (size < 32 || size % 32 != 0) {
    throw Error("synthetic size must be a positive multiple of 32, got " + std::to_string(size));
  }
  if (!(density > 0.0 && density < 1.0)) {
    throw Error("synthetic density must be in (0, 1), got " + format_double(density));
  }
  if (count < 0 || val_count < 0) throw Error("synthetic counts must be non-negative");
}

SyntheticDataset generate_synthetic(const SyntheticOptions& options) {
  options.validate();
  Rng master(options.seed);
  SyntheticDataset ds;
  for (std::int64_t i = 0; i < options.count + options.val_count; ++i) {
    Rng rng(master.next());
    const bool train = i < options.count;
    const std::int64_t local = train ? i : i - options.count;
    auto sample = synthesize_pair(rng, options, pad_id(local));
    (train ? ds.train : ds.val).push_back(std::move(sample));
  }
  return ds;
}

void write_synthetic(const std::string& root, const SyntheticOptions& options) {
  const SyntheticDataset ds = generate_synthetic(options);
  for (const auto& s : ds.train) write_sample((fs::path(root) / "train").string(), s);
  for (const auto& s : ds.val) write_sample((fs::path(root) / "val").string(), s);
  for (const char* split : {"train", "val"}) {
    for (const char* part : kParts) fs::create_directories(fs::path(root) / split / part);
  }
  KeyValues kv{{"generator", "mcd-synthetic-1"},
               {"seed", std::to_string(options.seed)},
               {"count", std::to_string(options.count)},
               {"val_count", std::to_string(options.val_count)},
               {"size", std::to_string(options.size)},
               {"density", format_double(options.density)}};
  std::ofstream out(fs::path(root) / "manifest.txt");
  if (!out) throw Error("cannot write manifest under " + root);
  out << format_key_values(kv);
}

Batch collate(const std::vector<ChangePairSample>& samples) {
  if (samples.empty()) throw Error("collate: empty batch");
  NoGradGuard no_grad;
  Batch batch;
  std::vector<Tensor> a, b, l;
  for (const auto& s : samples) {
    if (s.label.shape() != samples.front().label.shape()) {
      throw ShapeError("collate: sample " + s.id + " has size " + shape_str(s.label.shape()) +
                       ", batch has " + shape_str(samples.front().label.shape()));
    }
    batch.ids.push_back(s.id);
    // Batches always come out in the current default precision.
    const auto as_default = [](const Tensor& t) {
      return t.dtype() == default_dtype() ? t : t.to(default_dtype());
    };
    a.push_back(reshape(as_default(s.image_a), {1, 3, s.height(), s.width()}));
    b.push_back(reshape(as_default(s.image_b), {1, 3, s.height(), s.width()}));
    l.push_back(reshape(as_default(s.label), {1, s.height(), s.width()}));
  }
  batch.image_a = concat(a, 0);
  batch.image_b = concat(b, 0);
  batch.label = concat(l, 0);
  return batch;
}

ChangePairSample flip_sample(const ChangePairSample& sample, bool horizontal, bool vertical) {
  NoGradGuard no_grad;
  ChangePairSample out = sample;
  if (horizontal) {
    out.image_a = flip(out.image_a, 2);
    out.image_b = flip(out.image_b, 2);
    out.label = flip(out.label, 1);
  }
  if (vertical) {
    out.image_a = flip(out.image_a, 1);
    out.image_b = flip(out.image_b, 1);
    out.label = flip(out.label, 0);
  }
  return out;
}

BatchIterator::BatchIterator(const SampleSource& source, const BatchOptions& options,
                             std::uint64_t epoch_seed)
    : source_(source), options_(options), rng_(epoch_seed), order_(source.size()) {
  if (options.batch_size < 1) throw Error("batch size must be >= 1");
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (options.shuffle) {
    for (std::size_t i = order_.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(rng_.uniform_int(0, static_cast<std::int64_t>(i)));
      std::swap(order_[i - 1], order_[j]);
    }
  }
}

std::size_t BatchIterator::batch_count() const {
  const auto bs = static_cast<std::size_t>(options_.batch_size);
  return (order_.size() + bs - 1) / bs;
}

bool BatchIterator::next(Batch& batch) {
  if (cursor_ >= order_.size()) return false;
  const std::size_t end =
      std::min(order_.size(), cursor_ + static_cast<std::size_t>(options_.batch_size));
  std::vector<ChangePairSample> samples;
  for (; cursor_ < end; ++cursor_) {
    ChangePairSample s = source_.get(order_[cursor_]);
    if (options_.augment) {
      const bool h = rng_.bernoulli(0.5);
      const bool v = rng_.bernoulli(0.5);
      s = flip_sample(s, h, v);
    }
    samples.push_back(std::move(s));
  }
  batch = collate(samples);
  return true;
}

}  // namespace mcd
