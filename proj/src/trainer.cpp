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
#include "mcd/trainer.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "mcd/image_io.hpp"

namespace fs = std::filesystem;

namespace mcd {
namespace {

const std::set<std::string> kModelKeys = {"c1",    "depths",        "d_state",
                                          "expand", "discretization", "decoder_depth",
                                          "attention_reduction", "fusion"};

const std::set<std::string> kTrainKeys = {"lr",        "weight_decay",  "batch_size", "epochs",
                                          "beta1",     "beta2",         "eps",        "seed",
                                          "eval_interval", "precision", "max_steps",  "grad_clip",
                                          "augment"};

constexpr const char* kProgressPrefix = "progress.";

std::string join_ids(const std::vector<std::string>& ids) {
  std::string s;
  for (const auto& id : ids) s += (s.empty() ? "" : ",") + id;
  return s;
}

// Rewrites loss.csv so it holds the header plus rows up to `last_step`.
void reset_loss_log(const fs::path& path, std::int64_t last_step) {
  std::vector<std::string> keep;
  if (last_step > 0) {
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      const auto comma = line.find(',');
      if (comma == std::string::npos) continue;
      if (std::stoll(line.substr(0, comma)) <= last_step) keep.push_back(line);
    }
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write loss log: " + path.string());
  out << "step,loss,lr\n";
  for (const auto& l : keep) out << l << "\n";
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0)) throw Error("lr must be > 0");
  if (weight_decay < 0) throw Error("weight_decay must be >= 0");
  if (batch_size < 1) throw Error("batch_size must be >= 1");
  if (epochs < 0) throw Error("epochs must be >= 0");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw Error("betas must be in [0, 1)");
  if (!(eps > 0)) throw Error("eps must be > 0");
  if (eval_interval < 1) throw Error("eval_interval must be >= 1");
  if (max_steps < 0) throw Error("max_steps must be >= 0");
  if (grad_clip < 0) throw Error("grad_clip must be >= 0");
  model.validate();
}

AdamWOptions TrainConfig::optimizer() const {
  return AdamWOptions{.lr = lr, .beta1 = beta1, .beta2 = beta2, .eps = eps, .weight_decay = weight_decay};
}

KeyValues TrainConfig::to_key_values() const {
  KeyValues kv{{"lr", format_double(lr)},
               {"weight_decay", format_double(weight_decay)},
               {"batch_size", std::to_string(batch_size)},
               {"epochs", std::to_string(epochs)},
               {"beta1", format_double(beta1)},
               {"beta2", format_double(beta2)},
               {"eps", format_double(eps)},
               {"seed", std::to_string(seed)},
               {"eval_interval", std::to_string(eval_interval)},
               {"precision", dtype_name(precision)},
               {"max_steps", std::to_string(max_steps)},
               {"grad_clip", format_double(grad_clip)},
               {"augment", augment ? "true" : "false"}};
  model.to_key_values(kv);
  return kv;
}

TrainConfig TrainConfig::from_key_values(const KeyValues& kv) {
  for (const auto& [key, value] : kv) {
    if (!kTrainKeys.count(key) && !kModelKeys.count(key)) {
      throw Error("unknown config key `" + key + "`");
    }
  }
  TrainConfig c;
  c.lr = kv_double(kv, "lr", c.lr);
  c.weight_decay = kv_double(kv, "weight_decay", c.weight_decay);
  c.batch_size = kv_int(kv, "batch_size", c.batch_size);
  c.epochs = kv_int(kv, "epochs", c.epochs);
  c.beta1 = kv_double(kv, "beta1", c.beta1);
  c.beta2 = kv_double(kv, "beta2", c.beta2);
  c.eps = kv_double(kv, "eps", c.eps);
  const long long seed = kv_int(kv, "seed", 0);
  if (seed < 0) throw Error("seed must be >= 0");
  c.seed = static_cast<std::uint64_t>(seed);
  c.eval_interval = kv_int(kv, "eval_interval", c.eval_interval);
  c.precision = parse_dtype(kv_string(kv, "precision", "f32"));
  c.max_steps = kv_int(kv, "max_steps", c.max_steps);
  c.grad_clip = kv_double(kv, "grad_clip", c.grad_clip);
  c.augment = kv_bool(kv, "augment", c.augment);
  c.model = ModelConfig::from_key_values(kv, ModelConfig::desk());
  c.validate();
  return c;
}

TrainConfig TrainConfig::from_file(const std::string& path) {
  return from_key_values(read_key_values(path));
}

Checkpoint make_checkpoint(MambaChangeDetector& model, const AdamW* optimizer,
                           const TrainConfig& config, const TrainProgress& progress) {
  Checkpoint ck;
  ck.meta = config.to_key_values();
  const std::string p = kProgressPrefix;
  ck.meta[p + "step"] = std::to_string(progress.step);
  ck.meta[p + "epoch"] = std::to_string(progress.epoch);
  ck.meta[p + "batches_done"] = std::to_string(progress.batches_done);
  ck.meta[p + "epoch_seed"] = std::to_string(progress.epoch_seed);
  ck.meta[p + "best_iou"] = format_double(progress.best_iou);
  ck.meta[p + "rng_state"] = progress.rng_state;
  ck.meta[p + "optimizer_steps"] = std::to_string(optimizer ? optimizer->steps() : 0);
  // Tensors are snapshotted so later updates do not leak into the record.
  for (auto& [name, t] : model.named_parameters()) ck.tensors.emplace_back("param/" + name, t.clone());
  if (optimizer) {
    for (const auto& s : optimizer->slots()) {
      ck.tensors.emplace_back("adam_m/" + s.name, s.m.clone());
      ck.tensors.emplace_back("adam_v/" + s.name, s.v.clone());
    }
  }
  return ck;
}

void load_parameters(MambaChangeDetector& model, const Checkpoint& checkpoint) {
  for (auto& [name, t] : model.named_parameters()) {
    const Tensor* src = checkpoint.find("param/" + name);
    if (!src) throw FormatError("checkpoint has no parameter " + name);
    if (src->shape() != t.shape()) {
      throw FormatError("checkpoint parameter " + name + " has shape " + shape_str(src->shape()) +
                        ", model expects " + shape_str(t.shape()));
    }
    t.copy_from(src->dtype() == t.dtype() ? *src : src->to(t.dtype()));
  }
}

TrainConfig checkpoint_config(const Checkpoint& checkpoint) {
  KeyValues kv;
  for (const auto& [k, v] : checkpoint.meta) {
    if (k.rfind(kProgressPrefix, 0) != 0) kv[k] = v;
  }
  return TrainConfig::from_key_values(kv);
}

std::unique_ptr<MambaChangeDetector> load_model(const std::string& path) {
  const Checkpoint ck = load_checkpoint(path);
  const TrainConfig config = checkpoint_config(ck);
  DTypeGuard precision(config.precision);
  auto model = std::make_unique<MambaChangeDetector>(config.model, config.seed);
  load_parameters(*model, ck);
  return model;
}

MetricReport evaluate(const ChangeDetector& model, const SampleSource& source,
                      const EvalOptions& options) {
  if (source.size() == 0) throw Error("evaluate: the split has no samples");
  NoGradGuard no_grad;
  if (!options.overlay_dir.empty()) fs::create_directories(options.overlay_dir);
  ConfusionCounts counts;
  BatchIterator it(source, BatchOptions{.batch_size = options.batch_size, .shuffle = false, .augment = false}, 0);
  Batch batch;
  while (it.next(batch)) {
    const BinaryMap pred = predict_mask(model.forward(batch.image_a, batch.image_b));
    const BinaryMap gt = BinaryMap::from_tensor(batch.label);
    update(counts, pred, gt);
    if (options.overlay_dir.empty()) continue;
    for (std::int64_t n = 0; n < batch.size(); ++n) {
      Image img(static_cast<int>(pred.width), static_cast<int>(pred.height), 3);
      for (std::int64_t y = 0; y < pred.height; ++y) {
        for (std::int64_t x = 0; x < pred.width; ++x) {
          const bool p = pred.at(n, y, x), g = gt.at(n, y, x);
          std::uint8_t* px = img.at(static_cast<int>(x), static_cast<int>(y));
          if (p && g) {
            px[0] = px[1] = px[2] = 255;
          } else if (p) {
            px[1] = 255;
          } else if (g) {
            px[0] = 255;
          }
        }
      }
      write_png((fs::path(options.overlay_dir) / (batch.ids[static_cast<std::size_t>(n)] + ".png")).string(), img);
    }
  }
  return MetricReport::from_counts(counts);
}

ConfusionCounts count_overlay(const std::string& png_path) {
  const Image img = read_png(png_path, 3);
  ConfusionCounts c;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const std::uint8_t* p = img.at(x, y);
      if (p[0] == 255 && p[1] == 255 && p[2] == 255) {
        ++c.tp;
      } else if (p[0] == 0 && p[1] == 255 && p[2] == 0) {
        ++c.fp;
      } else if (p[0] == 255 && p[1] == 0 && p[2] == 0) {
        ++c.fn;
      } else if (p[0] == 0 && p[1] == 0 && p[2] == 0) {
        ++c.tn;
      } else {
        throw Error(png_path + ": pixel colour is not an overlay class");
      }
    }
  }
  return c;
}

Trainer::Trainer(const TrainConfig& config) : config_(config), rng_(config.seed + 1) {
  config.validate();
  DTypeGuard precision(config.precision);
  model_ = std::make_unique<MambaChangeDetector>(config.model, config.seed);
  optimizer_ = std::make_unique<AdamW>(model_->named_parameters(), config.optimizer());
  progress_.rng_state = rng_.state();
}

void Trainer::resume(const std::string& checkpoint_path) {
  const Checkpoint ck = load_checkpoint(checkpoint_path);
  const TrainConfig stored = checkpoint_config(ck);
  KeyValues mine, theirs;
  config_.model.to_key_values(mine);
  stored.model.to_key_values(theirs);
  if (mine != theirs || stored.precision != config_.precision) {
    throw Error("checkpoint " + checkpoint_path + " was written for a different model configuration");
  }
  load_parameters(*model_, ck);
  for (auto& s : optimizer_->slots()) {
    const Tensor* m = ck.find("adam_m/" + s.name);
    const Tensor* v = ck.find("adam_v/" + s.name);
    if (!m || !v) throw FormatError("checkpoint lacks optimizer state for " + s.name);
    s.m.copy_from(*m);
    s.v.copy_from(*v);
  }
  const std::string p = kProgressPrefix;
  optimizer_->set_steps(kv_int(ck.meta, p + "optimizer_steps", 0));
  progress_.step = kv_int(ck.meta, p + "step", 0);
  progress_.epoch = kv_int(ck.meta, p + "epoch", 0);
  progress_.batches_done = kv_int(ck.meta, p + "batches_done", 0);
  progress_.epoch_seed = std::stoull(kv_string(ck.meta, p + "epoch_seed", "0"));
  progress_.best_iou = kv_double(ck.meta, p + "best_iou", -1);
  progress_.rng_state = kv_string(ck.meta, p + "rng_state", "");
  rng_.set_state(progress_.rng_state);
}

std::vector<LossRecord> Trainer::run(const SampleSource& train, const SampleSource* val,
                                     const std::string& out_dir) {
  if (train.size() == 0) throw Error("train: the training split has no samples");
  if (val && val->size() == 0) throw Error("train: the validation split has no samples");
  DTypeGuard precision(config_.precision);

  const fs::path out(out_dir);
  std::ofstream loss_log;
  if (!out_dir.empty()) {
    fs::create_directories(out);
    reset_loss_log(out / "loss.csv", progress_.step);
    loss_log.open(out / "loss.csv", std::ios::app);
  }
  const auto save = [&](const std::string& name) {
    if (out_dir.empty()) return;
    save_checkpoint((out / name).string(), make_checkpoint(*model_, optimizer_.get(), config_, progress_));
  };
  const auto validate_now = [&]() {
    if (!val) return;
    last_eval_ = evaluate(*model_, *val, EvalOptions{.batch_size = config_.batch_size, .overlay_dir = ""});
    spdlog::info("step {} epoch {}: val F1 {:.4f} IoU {:.4f} OA {:.4f}", progress_.step,
                 progress_.epoch, last_eval_->f1, last_eval_->iou, last_eval_->oa);
    if (!out_dir.empty()) write_report((out / "val").string(), *last_eval_);
    if (last_eval_->iou > progress_.best_iou) {
      progress_.best_iou = last_eval_->iou;
      save("best.ckpt");
    }
  };
  const auto capped = [&] { return config_.max_steps > 0 && progress_.step >= config_.max_steps; };

  std::vector<LossRecord> losses;
  std::int64_t evaluated_at = -1;
  while (progress_.epoch < config_.epochs && !capped()) {
    if (progress_.batches_done == 0) {
      progress_.epoch_seed = rng_.next();
      progress_.rng_state = rng_.state();
    }
    BatchIterator it(train,
                     BatchOptions{.batch_size = config_.batch_size, .shuffle = true, .augment = config_.augment},
                     progress_.epoch_seed);
    Batch batch;
    for (std::int64_t i = 0; i < progress_.batches_done; ++i) it.next(batch);
    while (!capped() && it.next(batch)) {
      const Tensor logits = model_->forward(batch.image_a, batch.image_b);
      const Tensor loss = cross_entropy_2class(logits, batch.label);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw NumericError("non-finite loss at step " + std::to_string(progress_.step + 1) +
                           " (batch " + join_ids(batch.ids) + ")");
      }
      loss.backward();
      if (config_.grad_clip > 0) optimizer_->clip_grad_norm(config_.grad_clip);
      optimizer_->step();
      optimizer_->zero_grad();
      ++progress_.step;
      ++progress_.batches_done;
      const LossRecord rec{progress_.step, value, config_.lr};
      losses.push_back(rec);
      if (loss_log.is_open()) {
        loss_log << rec.step << "," << format_double(rec.loss) << "," << format_double(rec.lr) << "\n";
        loss_log.flush();
      }
      if (on_step) on_step(rec);
    }
    if (progress_.batches_done < static_cast<std::int64_t>(it.batch_count())) break;  // capped mid-epoch
    ++progress_.epoch;
    progress_.batches_done = 0;
    if (progress_.epoch % config_.eval_interval == 0) {
      validate_now();
      evaluated_at = progress_.step;
    }
    save("last.ckpt");
  }
  if (evaluated_at != progress_.step && !losses.empty()) validate_now();
  save("last.ckpt");
  return losses;
}

}  // namespace mcd
