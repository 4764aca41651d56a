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
#include "mcd/metrics.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "mcd/tensor.hpp"

namespace mcd {
namespace {

void require_pixels(const ConfusionCounts& c) {
  if (c.total() <= 0) throw Error("metrics: no pixels have been counted");
}

}  // namespace

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  tp += o.tp;
  fp += o.fp;
  fn += o.fn;
  tn += o.tn;
  return *this;
}

void update(ConfusionCounts& counts, const BinaryMap& pred, const BinaryMap& gt) {
  if (pred.batch != gt.batch || pred.height != gt.height || pred.width != gt.width) {
    throw ShapeError("update: prediction " + shape_str({pred.batch, pred.height, pred.width}) +
                     " vs ground truth " + shape_str({gt.batch, gt.height, gt.width}));
  }
  ConfusionCounts add;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    const std::uint8_t p = pred.values[i], g = gt.values[i];
    if (p > 1 || g > 1) throw NumericError("update: maps must hold only 0 and 1");
    if (p && g) {
      ++add.tp;
    } else if (p) {
      ++add.fp;
    } else if (g) {
      ++add.fn;
    } else {
      ++add.tn;
    }
  }
  counts += add;
}

double f1_score(const ConfusionCounts& c) {
  require_pixels(c);
  const std::int64_t denom = 2 * c.tp + c.fp + c.fn;
  return denom == 0 ? 1.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

double iou_score(const ConfusionCounts& c) {
  require_pixels(c);
  const std::int64_t denom = c.tp + c.fp + c.fn;
  return denom == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(denom);
}

double overall_accuracy(const ConfusionCounts& c) {
  require_pixels(c);
  return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

MetricReport MetricReport::from_counts(const ConfusionCounts& counts) {
  return MetricReport{counts, f1_score(counts), iou_score(counts), overall_accuracy(counts)};
}

std::string MetricReport::to_text() const {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "F1   %.4f\nIoU  %.4f\nOA   %.2f%%\nTP %lld  FP %lld  FN %lld  TN %lld\n", f1, iou,
                100.0 * oa, static_cast<long long>(counts.tp), static_cast<long long>(counts.fp),
                static_cast<long long>(counts.fn), static_cast<long long>(counts.tn));
  return buf;
}

std::string MetricReport::to_json() const {
  nlohmann::json j{{"f1", f1}, {"iou", iou}, {"oa", oa},  {"tp", counts.tp},
                   {"fp", counts.fp}, {"fn", counts.fn}, {"tn", counts.tn}};
  return j.dump(2) + "\n";
}

void write_report(const std::string& dir, const MetricReport& report) {
  std::filesystem::create_directories(dir);
  std::ofstream txt(std::filesystem::path(dir) / "metrics.txt");
  std::ofstream json(std::filesystem::path(dir) / "metrics.json");
  if (!txt || !json) throw Error("cannot write metric report under " + dir);
  txt << report.to_text();
  json << report.to_json();
}

}  // namespace mcd
