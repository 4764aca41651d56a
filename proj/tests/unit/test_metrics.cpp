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
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mcd/metrics.hpp"
#include "mcd/nn.hpp"

namespace mcd {
namespace {

BinaryMap filled(std::int64_t h, std::int64_t w, std::uint8_t v) {
  BinaryMap m(1, h, w);
  std::fill(m.values.begin(), m.values.end(), v);
  return m;
}

BinaryMap random_map(Rng& rng, std::int64_t h, std::int64_t w) {
  BinaryMap m(1, h, w);
  for (auto& v : m.values) v = rng.bernoulli(0.4) ? 1 : 0;
  return m;
}

TEST(UpdateTest, AllOnesMatch) {
  ConfusionCounts c;
  update(c, filled(2, 2, 1), filled(2, 2, 1));
  EXPECT_EQ(c, (ConfusionCounts{.tp = 4}));
}

TEST(UpdateTest, AllFalsePositives) {
  ConfusionCounts c;
  update(c, filled(2, 2, 1), filled(2, 2, 0));
  EXPECT_EQ(c, (ConfusionCounts{.fp = 4}));
}

TEST(UpdateTest, MatchesBruteForceCount) {
  Rng rng(1);
  BinaryMap pred = random_map(rng, 8, 8), gt = random_map(rng, 8, 8);
  ConfusionCounts expected;
  for (std::int64_t y = 0; y < 8; ++y) {
    for (std::int64_t x = 0; x < 8; ++x) {
      const bool p = pred.at(0, y, x), g = gt.at(0, y, x);
      if (p && g) ++expected.tp;
      if (p && !g) ++expected.fp;
      if (!p && g) ++expected.fn;
      if (!p && !g) ++expected.tn;
    }
  }
  ConfusionCounts c;
  update(c, pred, gt);
  EXPECT_EQ(c, expected);
  EXPECT_EQ(c.total(), 64);
}

TEST(UpdateTest, OrderIndependent) {
  Rng rng(2);
  std::vector<std::pair<BinaryMap, BinaryMap>> pairs;
  for (int i = 0; i < 5; ++i) pairs.emplace_back(random_map(rng, 4, 6), random_map(rng, 4, 6));
  ConfusionCounts fwd, rev;
  for (const auto& [p, g] : pairs) update(fwd, p, g);
  for (auto it = pairs.rbegin(); it != pairs.rend(); ++it) update(rev, it->first, it->second);
  EXPECT_EQ(fwd, rev);
}

TEST(UpdateTest, Errors) {
  ConfusionCounts c;
  EXPECT_THROW(update(c, filled(2, 2, 1), filled(2, 3, 1)), ShapeError);
  BinaryMap bad = filled(2, 2, 1);
  bad.values[1] = 2;
  EXPECT_THROW(update(c, bad, filled(2, 2, 1)), NumericError);
}

TEST(ScoreTest, DirectFormula) {
  ConfusionCounts c{.tp = 1, .fp = 1, .fn = 1, .tn = 0};
  EXPECT_DOUBLE_EQ(f1_score(c), 0.5);
  EXPECT_DOUBLE_EQ(iou_score(c), 1.0 / 3.0);
}

TEST(ScoreTest, EmptyPositiveSetScoresOne) {
  ConfusionCounts c{.tn = 10};
  EXPECT_EQ(f1_score(c), 1.0);
  EXPECT_EQ(iou_score(c), 1.0);
  EXPECT_EQ(overall_accuracy(c), 1.0);
}

TEST(ScoreTest, EmptyCountsThrow) {
  EXPECT_THROW(f1_score({}), Error);
  EXPECT_THROW(iou_score({}), Error);
  EXPECT_THROW(overall_accuracy({}), Error);
}

TEST(ScoreTest, IouF1IdentityOnRandomCounts) {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    ConfusionCounts c{.tp = rng.uniform_int(0, 1000), .fp = rng.uniform_int(0, 1000),
                      .fn = rng.uniform_int(0, 1000), .tn = rng.uniform_int(0, 1000)};
    if (c.total() == 0) continue;
    const double f1 = f1_score(c);
    EXPECT_NEAR(iou_score(c), f1 / (2 - f1), 1e-15);
    for (double s : {f1, iou_score(c), overall_accuracy(c)}) {
      EXPECT_GE(s, 0.0);
      EXPECT_LE(s, 1.0);
    }
    EXPECT_EQ(overall_accuracy(c) == 1.0, c.fp == 0 && c.fn == 0);
  }
}

TEST(ScoreTest, PublishedPairsFollowGlobalIdentity) {
  // WHU-CD and CDD (F1, IoU) pairs.
  EXPECT_NEAR(0.953 / (2 - 0.953), 0.911, 0.001);
  EXPECT_NEAR(0.982 / (2 - 0.982), 0.963, 0.002);
  // DSIFN-CD's pair is off the identity by more than rounding explains.
  EXPECT_GT(std::abs(0.970 / (2 - 0.970) - 0.935), 0.005);
}

TEST(ReportTest, TextAndJson) {
  ConfusionCounts c{.tp = 3, .fp = 1, .fn = 2, .tn = 94};
  MetricReport r = MetricReport::from_counts(c);
  EXPECT_DOUBLE_EQ(r.oa, 0.97);
  EXPECT_NE(r.to_text().find("97"), std::string::npos);
  auto j = nlohmann::json::parse(r.to_json());
  EXPECT_DOUBLE_EQ(j["iou"].get<double>(), 0.5);
  EXPECT_DOUBLE_EQ(j["f1"].get<double>(), 6.0 / 9.0);
  EXPECT_EQ(j["tp"].get<int>(), 3);

  const auto dir = std::filesystem::temp_directory_path() / "mcd_metrics_report";
  std::filesystem::remove_all(dir);
  write_report(dir.string(), r);
  EXPECT_TRUE(std::filesystem::exists(dir / "metrics.txt"));
  std::ifstream in(dir / "metrics.json");
  std::stringstream ss;
  ss << in.rdbuf();
  EXPECT_EQ(nlohmann::json::parse(ss.str())["fn"].get<int>(), 2);
  std::filesystem::remove_all(dir);
}

TEST(CountsTest, MergeByAddition) {
  ConfusionCounts a{1, 2, 3, 4}, b{10, 20, 30, 40};
  EXPECT_EQ(a + b, (ConfusionCounts{11, 22, 33, 44}));
}

}  // namespace
}  // namespace mcd
