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
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mcd/checkpoint.hpp"
#include "mcd/datasets.hpp"
#include "mcd/metrics.hpp"
#include "mcd/model.hpp"
#include "mcd/optimizer.hpp"

namespace mcd {

struct TrainConfig {
  double lr = 6e-5;
  double weight_decay = 0.01;
  std::int64_t batch_size = 8;
  std::int64_t epochs = 150;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  std::int64_t eval_interval = 1;  // epochs between validation passes
  DType precision = DType::kF32;
  std::int64_t max_steps = 0;  // 0: no cap
  double grad_clip = 0;        // 0: off
  bool augment = true;
  ModelConfig model;

  void validate() const;
  AdamWOptions optimizer() const;
  KeyValues to_key_values() const;
  // Unknown keys are rejected so typos do not pass silently.
  static TrainConfig from_key_values(const KeyValues& kv);
  static TrainConfig from_file(const std::string& path);
};

struct LossRecord {
  std::int64_t step = 0;
  double loss = 0;
  double lr = 0;
};

// Where the next step resumes.
struct TrainProgress {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  std::int64_t batches_done = 0;  // within `epoch`
  std::uint64_t epoch_seed = 0;
  double best_iou = -1;
  std::string rng_state;
};

// Records which model parameters, optimizer moments, configuration and
// progress make up a checkpoint.
Checkpoint make_checkpoint(MambaChangeDetector& model, const AdamW* optimizer,
                           const TrainConfig& config, const TrainProgress& progress);
void load_parameters(MambaChangeDetector& model, const Checkpoint& checkpoint);
TrainConfig checkpoint_config(const Checkpoint& checkpoint);
// Builds the model described by the checkpoint and loads its weights.
std::unique_ptr<MambaChangeDetector> load_model(const std::string& path);

struct EvalOptions {
  std::int64_t batch_size = 8;
  std::string overlay_dir;  // empty: no overlays
};

// Global confusion matrix over the source. Overlays are RGB PNGs per sample:
// TP white, TN black, FP green, FN red.
MetricReport evaluate(const ChangeDetector& model, const SampleSource& source,
                      const EvalOptions& options = {});

// Recolours an overlay back into counts.
ConfusionCounts count_overlay(const std::string& png_path);

class Trainer {
 public:
  explicit Trainer(const TrainConfig& config);

  // Restores weights, optimizer moments and progress. The stored config
  // must match this trainer's model settings.
  void resume(const std::string& checkpoint_path);

  // Trains until `epochs` or `max_steps`. With out_dir set, writes
  // loss.csv, last.ckpt, best.ckpt (by validation IoU) and the latest
  // validation report.
  std::vector<LossRecord> run(const SampleSource& train, const SampleSource* val,
                              const std::string& out_dir = "");

  MambaChangeDetector& model() { return *model_; }
  AdamW& optimizer() { return *optimizer_; }
  const TrainProgress& progress() const { return progress_; }
  const std::optional<MetricReport>& last_eval() const { return last_eval_; }

  std::function<void(const LossRecord&)> on_step;

 private:
  TrainConfig config_;
  std::unique_ptr<MambaChangeDetector> model_;
  std::unique_ptr<AdamW> optimizer_;
  TrainProgress progress_;
  Rng rng_;
  std::optional<MetricReport> last_eval_;
};

}  // namespace mcd
