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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "mcd/checkpoint.hpp"
#include "mcd/image_io.hpp"
#include "mcd/optimizer.hpp"
#include "mcd/trainer.hpp"
#include "test_util.hpp"

namespace mcd {
namespace {

namespace fs = std::filesystem;
using testing::random_leaf;
using testing::random_tensor;

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("mcd_training_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ModelConfig tiny_model() {
  ModelConfig m;
  m.encoder = EncoderConfig{.c1 = 4, .depths = {1, 1, 1, 1}, .d_state = 2, .expand = 1};
  return m;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.lr = 1e-3;
  c.batch_size = 4;
  c.epochs = 3;
  c.augment = true;
  c.seed = 5;
  c.model = tiny_model();
  return c;
}

SyntheticDataset tiny_data(std::int64_t count = 8) {
  return generate_synthetic({.seed = 2, .count = count, .size = 32, .density = 0.15, .val_count = 4});
}

// Sets every gradient to the given tensors through a linear loss.
void set_grads(const std::vector<Tensor>& params, const std::vector<Tensor>& grads) {
  Tensor loss;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor term = sum(mul(params[i], grads[i]));
    loss = loss.defined() ? loss + term : term;
  }
  loss.backward();
}

TEST(AdamWTest, ZeroGradientOnlyDecays) {
  DTypeGuard guard(DType::kF64);
  Rng rng(1);
  Tensor w = random_leaf({3, 2}, rng);
  const auto before = w.values();
  AdamW opt({{"layer.weight", w}}, {.lr = 0.1, .weight_decay = 0.01});
  set_grads({w}, {Tensor::zeros({3, 2})});
  opt.step();
  for (std::size_t i = 0; i < before.size(); ++i)
    EXPECT_DOUBLE_EQ(w.at(static_cast<std::int64_t>(i)), before[i] * (1 - 0.1 * 0.01));
}

TEST(AdamWTest, FirstUnitGradientStepIsAboutLr) {
  DTypeGuard guard(DType::kF64);
  Tensor w = Tensor::full({1}, 0.5);
  w.requires_grad_(true);
  AdamW opt({{"w.weight", w}}, {.lr = 1e-3, .weight_decay = 0});
  set_grads({w}, {Tensor::full({1}, 1)});
  opt.step();
  // Bias-corrected moments are g and g^2, so the step is lr * g / (|g| + eps).
  EXPECT_NEAR(w.at(0), 0.5 - 1e-3 / (1 + 1e-8), 1e-15);
}

TEST(AdamWTest, IdenticalParametersStayIdentical) {
  DTypeGuard guard(DType::kF64);
  Tensor a = Tensor::full({2}, 0.3), b = Tensor::full({2}, 0.3);
  a.requires_grad_(true);
  b.requires_grad_(true);
  AdamW opt({{"a.weight", a}, {"b.weight", b}}, {.lr = 0.01});
  Rng rng(2);
  for (int s = 0; s < 5; ++s) {
    Tensor g = random_tensor({2}, rng);
    set_grads({a, b}, {g, g});
    opt.step();
    opt.zero_grad();
    EXPECT_EQ(a.values(), b.values());
  }
}

TEST(AdamWTest, WithoutDecayEqualsReferenceAdam) {
  DTypeGuard guard(DType::kF64);
  Rng rng(3);
  Tensor w = random_leaf({4, 3}, rng);
  std::vector<double> p = w.values(), m(p.size(), 0), v(p.size(), 0);
  const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  AdamW opt({{"x.weight", w}}, {.lr = lr, .beta1 = b1, .beta2 = b2, .eps = eps, .weight_decay = 0});
  for (int t = 1; t <= 20; ++t) {
    Tensor g = random_tensor({4, 3}, rng);
    set_grads({w}, {g});
    opt.step();
    opt.zero_grad();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g.at(static_cast<std::int64_t>(i));
      m[i] = b1 * m[i] + (1 - b1) * gi;
      v[i] = b2 * v[i] + (1 - b2) * gi * gi;
      const double mh = m[i] / (1 - std::pow(b1, t)), vh = v[i] / (1 - std::pow(b2, t));
      p[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
  for (std::size_t i = 0; i < p.size(); ++i)
    EXPECT_NEAR(w.at(static_cast<std::int64_t>(i)), p[i], 1e-7);
  EXPECT_EQ(opt.steps(), 20);
}

TEST(AdamWTest, DecayOnlyForWeights) {
  EXPECT_TRUE(takes_weight_decay("encoder.stem.conv1.weight"));
  for (const char* n : {"a.bias", "norm.gamma", "norm.beta", "ss2d.A_log", "ss2d.D"})
    EXPECT_FALSE(takes_weight_decay(n)) << n;
}

TEST(AdamWTest, NonFiniteGradientNamesTheParameter) {
  Tensor a = Tensor::full({2}, 1), b = Tensor::full({2}, 1);
  a.requires_grad_(true);
  b.requires_grad_(true);
  AdamW opt({{"good.weight", a}, {"bad.weight", b}}, {.lr = 0.1});
  set_grads({a, b}, {Tensor::full({2}, 1),
                     Tensor::from_values({2}, {1, std::numeric_limits<double>::quiet_NaN()})});
  try {
    opt.step();
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.weight"), std::string::npos);
  }
  EXPECT_EQ(a.values(), (std::vector<double>{1, 1}));  // nothing moved
}

TEST(AdamWTest, ClipGradNorm) {
  DTypeGuard guard(DType::kF64);
  Tensor a = Tensor::zeros({2});
  a.requires_grad_(true);
  AdamW opt({{"a.weight", a}}, {});
  set_grads({a}, {Tensor::from_values({2}, {3, 4})});
  EXPECT_DOUBLE_EQ(opt.clip_grad_norm(1.0), 5.0);
  EXPECT_NEAR(a.grad_values()[0], 0.6, 1e-12);
  EXPECT_NEAR(a.grad_values()[1], 0.8, 1e-12);
}

TEST(TrainConfigTest, DefaultsAndValidation) {
  TrainConfig c;
  EXPECT_DOUBLE_EQ(c.lr, 6e-5);
  EXPECT_DOUBLE_EQ(c.weight_decay, 0.01);
  EXPECT_EQ(c.batch_size, 8);
  EXPECT_EQ(c.epochs, 150);
  EXPECT_DOUBLE_EQ(c.beta1, 0.9);
  EXPECT_DOUBLE_EQ(c.beta2, 0.999);
  EXPECT_DOUBLE_EQ(c.eps, 1e-8);
  c.lr = 0;
  EXPECT_THROW(c.validate(), Error);
  c = TrainConfig{};
  c.weight_decay = -1;
  EXPECT_THROW(c.validate(), Error);
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(TrainConfigTest, KeyValueRoundTripAndErrors) {
  TrainConfig c = tiny_config();
  c.model.fusion = FusionVariant::kDifference;
  TrainConfig back = TrainConfig::from_key_values(c.to_key_values());
  EXPECT_EQ(back.to_key_values(), c.to_key_values());
  EXPECT_THROW(TrainConfig::from_key_values({{"learning_rate", "0.1"}}), Error);
  EXPECT_THROW(TrainConfig::from_key_values({{"lr", "fast"}}), Error);
  try {
    parse_key_values("lr = 0.1\nthis line has no equals\n", "cfg.txt");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("cfg.txt:2"), std::string::npos) << e.what();
  }
}

TEST(CheckpointTest, ReloadGivesBitwiseIdenticalForward) {
  fs::path dir = scratch("reload");
  MambaChangeDetector model(tiny_model(), 3);
  TrainConfig cfg = tiny_config();
  save_checkpoint((dir / "m.ckpt").string(), make_checkpoint(model, nullptr, cfg, {}));
  auto loaded = load_model((dir / "m.ckpt").string());
  Rng rng(4);
  Tensor a = random_tensor({2, 3, 32, 32}, rng, 0, 1), b = random_tensor({2, 3, 32, 32}, rng, 0, 1);
  EXPECT_EQ(loaded->forward(a, b).values(), model.forward(a, b).values());
  // The checkpoint holds exactly the model's scalars.
  Checkpoint ck = load_checkpoint((dir / "m.ckpt").string());
  std::int64_t stored = 0;
  for (const auto& [name, t] : ck.tensors) stored += t.numel();
  EXPECT_EQ(stored, model.parameter_count());
  fs::remove_all(dir);
}

TEST(CheckpointTest, OptimizerStateRoundTripsBitExactly) {
  fs::path dir = scratch("optstate");
  Checkpoint ck;
  ck.meta["note"] = "x";
  Rng rng(5);
  ck.tensors.emplace_back("param/a", random_tensor({3, 4}, rng));
  {
    DTypeGuard guard(DType::kF64);
    ck.tensors.emplace_back("adam_m/a", random_tensor({3, 4}, rng));
  }
  save_checkpoint((dir / "c.ckpt").string(), ck);
  Checkpoint back = load_checkpoint((dir / "c.ckpt").string());
  EXPECT_EQ(back.meta.at("note"), "x");
  ASSERT_EQ(back.tensors.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back.tensors[i].first, ck.tensors[i].first);
    EXPECT_EQ(back.tensors[i].second.dtype(), ck.tensors[i].second.dtype());
    EXPECT_EQ(back.tensors[i].second.values(), ck.tensors[i].second.values());
  }
  fs::remove_all(dir);
}

void corrupt(const fs::path& path, std::size_t offset, char value) {
  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(static_cast<std::streamoff>(offset));
  f.put(value);
}

TEST(CheckpointTest, FormatErrors) {
  fs::path dir = scratch("format");
  MambaChangeDetector model(tiny_model(), 3);
  const fs::path good = dir / "good.ckpt";
  save_checkpoint(good.string(), make_checkpoint(model, nullptr, tiny_config(), {}));

  fs::copy_file(good, dir / "magic.ckpt");
  corrupt(dir / "magic.ckpt", 0, 'X');
  EXPECT_THROW(load_checkpoint((dir / "magic.ckpt").string()), FormatError);

  fs::copy_file(good, dir / "version.ckpt");
  corrupt(dir / "version.ckpt", 8, 7);
  try {
    load_checkpoint((dir / "version.ckpt").string());
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }

  fs::copy_file(good, dir / "short.ckpt");
  fs::resize_file(dir / "short.ckpt", fs::file_size(good) / 2);
  try {
    load_checkpoint((dir / "short.ckpt").string());
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
  }
  EXPECT_THROW(load_checkpoint((dir / "missing.ckpt").string()), Error);
  fs::remove_all(dir);
}

// Reads the label back out of the images: channel 0 of B minus A.
class OracleDetector : public ChangeDetector {
 public:
  explicit OracleDetector(bool perfect) : perfect_(perfect) {}
  Tensor forward(const Tensor& pre, const Tensor& post) const override {
    const std::int64_t b = pre.size(0), h = pre.size(2), w = pre.size(3);
    Tensor logits = Tensor::zeros({b, 2, h, w});
    if (!perfect_) return logits;
    for (std::int64_t n = 0; n < b; ++n)
      for (std::int64_t i = 0; i < h * w; ++i)
        logits.set((n * 2 + 1) * h * w + i, post.at(n * 3 * h * w + i) - pre.at(n * 3 * h * w + i));
    return logits;
  }
  void visit_parameters(const std::string&, const ParameterVisitor&) override {}

 private:
  bool perfect_;
};

MemorySource encoded_split() {
  auto data = tiny_data(6).train;
  for (auto& s : data) {
    s.image_a = Tensor::zeros(s.image_a.shape());
    s.image_b = Tensor::zeros(s.image_b.shape());
    for (std::int64_t i = 0; i < s.label.numel(); ++i) s.image_b.set(i, s.label.at(i));
  }
  return MemorySource(data);
}

TEST(EvaluateTest, PerfectPredictorScoresOne) {
  MemorySource src = encoded_split();
  MetricReport r = evaluate(OracleDetector(true), src, {.batch_size = 4, .overlay_dir = ""});
  EXPECT_EQ(r.f1, 1.0);
  EXPECT_EQ(r.iou, 1.0);
  EXPECT_EQ(r.oa, 1.0);
}

TEST(EvaluateTest, NoChangePredictorScoresZeroIou) {
  MemorySource src = encoded_split();
  MetricReport r = evaluate(OracleDetector(false), src, {.batch_size = 4, .overlay_dir = ""});
  EXPECT_GT(r.counts.fn, 0);
  EXPECT_EQ(r.iou, 0.0);
}

TEST(EvaluateTest, EmptySplitIsAnError) {
  MemorySource empty({});
  EXPECT_THROW(evaluate(OracleDetector(true), empty), Error);
}

TEST(EvaluateTest, OverlayColoursRecountToConfusion) {
  fs::path dir = scratch("overlay");
  MambaChangeDetector model(tiny_model(), 6);
  MemorySource src(tiny_data(3).train);
  MetricReport r = evaluate(model, src, {.batch_size = 2, .overlay_dir = dir.string()});
  ConfusionCounts recount;
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    recount += count_overlay(e.path().string());
    ++files;
  }
  EXPECT_EQ(files, 3u);
  EXPECT_EQ(recount, r.counts);
  fs::remove_all(dir);
}

TEST(TrainerTest, OneEpochOfEightIsOneStep) {
  TrainConfig c = tiny_config();
  c.batch_size = 8;
  c.epochs = 1;
  Trainer t(c);
  MemorySource src(tiny_data(8).train);
  EXPECT_EQ(t.run(src, nullptr).size(), 1u);
  EXPECT_EQ(t.optimizer().steps(), 1);
}

TEST(TrainerTest, SameSeedSameLosses) {
  MemorySource src(tiny_data().train);
  auto run = [&] {
    Trainer t(tiny_config());
    std::vector<double> out;
    for (const auto& r : t.run(src, nullptr)) out.push_back(r.loss);
    return out;
  };
  const auto a = run();
  EXPECT_EQ(a.size(), 6u);
  EXPECT_EQ(a, run());
}

TEST(TrainerTest, ResumeMatchesUninterruptedRun) {
  fs::path dir = scratch("resume");
  auto data = tiny_data();
  MemorySource train(data.train), val(data.val);
  TrainConfig c = tiny_config();
  Trainer straight(c);
  const auto full = straight.run(train, &val);

  TrainConfig first = c;
  first.max_steps = 3;  // stops mid-epoch
  Trainer head(first);
  head.run(train, &val, dir.string());

  Trainer tail(c);
  tail.resume((dir / "last.ckpt").string());
  EXPECT_EQ(tail.progress().step, 3);
  EXPECT_EQ(tail.progress().batches_done, 1);
  const auto rest = tail.run(train, &val, dir.string());
  ASSERT_EQ(rest.size(), full.size() - 3);
  for (std::size_t i = 0; i < rest.size(); ++i) {
    EXPECT_EQ(rest[i].step, full[i + 3].step);
    EXPECT_EQ(rest[i].loss, full[i + 3].loss);
  }
  // The log holds one row per step, header first.
  std::ifstream log(dir / "loss.csv");
  std::string line;
  std::getline(log, line);
  EXPECT_EQ(line, "step,loss,lr");
  std::size_t rows = 0;
  while (std::getline(log, line)) ++rows;
  EXPECT_EQ(rows, full.size());
  EXPECT_TRUE(fs::exists(dir / "best.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "val" / "metrics.json"));
  fs::remove_all(dir);
}

TEST(TrainerTest, ResumeRejectsOtherModel) {
  fs::path dir = scratch("mismatch");
  TrainConfig c = tiny_config();
  c.max_steps = 1;
  Trainer t(c);
  MemorySource src(tiny_data().train);
  t.run(src, nullptr, dir.string());
  TrainConfig other = tiny_config();
  other.model.encoder.c1 = 8;
  Trainer u(other);
  EXPECT_THROW(u.resume((dir / "last.ckpt").string()), Error);
  fs::remove_all(dir);
}

TEST(TrainerTest, NonFiniteLossNamesTheBatch) {
  TrainConfig c = tiny_config();
  Trainer t(c);
  Tensor& bias = t.model().decoder.classifier.bias;
  bias.set(0, std::numeric_limits<double>::infinity());
  bias.set(1, std::numeric_limits<double>::infinity());
  MemorySource src(tiny_data().train);
  try {
    t.run(src, nullptr);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("step 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("batch"), std::string::npos) << msg;
  }
}

}  // namespace
}  // namespace mcd
