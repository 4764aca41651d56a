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
#include <string>

#include "mcd/binary_map.hpp"

namespace mcd {

// Pixel confusion counts; the positive class is "change".
struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;

  std::int64_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o);
  friend ConfusionCounts operator+(ConfusionCounts a, const ConfusionCounts& b) { return a += b; }
  bool operator==(const ConfusionCounts&) const = default;
};

// Adds the per-pixel outcomes of pred against gt to counts.
void update(ConfusionCounts& counts, const BinaryMap& pred, const BinaryMap& gt);

// When tp = fp = fn = 0 there is nothing to miss, so F1 and IoU are 1.
// All three throw on empty counts.
double f1_score(const ConfusionCounts& c);
double iou_score(const ConfusionCounts& c);
double overall_accuracy(const ConfusionCounts& c);

struct MetricReport {
  ConfusionCounts counts;
  double f1 = 0;
  double iou = 0;
  double oa = 0;

  static MetricReport from_counts(const ConfusionCounts& counts);
  std::string to_text() const;  // OA shown as a percentage
  std::string to_json() const;
};

// Writes <dir>/metrics.txt and <dir>/metrics.json.
void write_report(const std::string& dir, const MetricReport& report);

}  // namespace mcd
