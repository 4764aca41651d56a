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
// mcd: synthetic data, training, evaluation, inference and analysis for the
// Mamba change detector.

#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "mcd/analysis.hpp"
#include "mcd/gradcheck.hpp"
#include "mcd/image_io.hpp"
#include "mcd/trainer.hpp"

namespace fs = std::filesystem;
using namespace mcd;

namespace {

constexpr int kUserError = 1;
constexpr int kInternalError = 2;

void require_dir(const std::string& path, const char* flag) {
  if (!fs::is_directory(path)) throw Error(std::string(flag) + ": directory not found: " + path);
}

void require_file(const std::string& path, const char* flag) {
  if (!fs::is_regular_file(path)) throw Error(std::string(flag) + ": file not found: " + path);
}

int cmd_synth(const SyntheticOptions& opt, const std::string& out) {
  write_synthetic(out, opt);
  std::cout << "wrote " << opt.count << " train and " << opt.val_count << " val pairs to " << out << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data, const std::string& out,
              const std::string& resume) {
  require_dir(data, "--data");
  TrainConfig config;
  if (!config_path.empty()) {
    require_file(config_path, "--config");
    config = TrainConfig::from_file(config_path);
  }
  DiskSource train(load_dataset(data, "train"));
  DiskSource val(load_dataset(data, "val"));
  fs::create_directories(out);
  {
    std::ofstream snapshot(fs::path(out) / "config.txt");
    snapshot << format_key_values(config.to_key_values());
  }
  Trainer trainer(config);
  if (!resume.empty()) {
    require_file(resume, "--resume");
    trainer.resume(resume);
  }
  trainer.on_step = [](const LossRecord& r) {
    if (r.step % 10 == 0) spdlog::info("step {} loss {:.5f}", r.step, r.loss);
  };
  const auto losses = trainer.run(train, &val, out);
  std::cout << "trained " << losses.size() << " steps; best val IoU "
            << trainer.progress().best_iou << "; outputs in " << out << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data, const std::string& split,
             const std::string& out) {
  require_file(checkpoint, "--checkpoint");
  require_dir(data, "--data");
  auto model = load_model(checkpoint);
  DiskSource source(load_dataset(data, split));
  const MetricReport report =
      evaluate(*model, source, EvalOptions{.batch_size = 8, .overlay_dir = (fs::path(out) / "overlays").string()});
  write_report(out, report);
  std::cout << report.to_text();
  return 0;
}

int cmd_infer(const std::string& checkpoint, const std::string& a, const std::string& b,
              const std::string& out) {
  require_file(checkpoint, "--checkpoint");
  require_file(a, "--a");
  require_file(b, "--b");
  auto model = load_model(checkpoint);
  const TrainConfig config = checkpoint_config(load_checkpoint(checkpoint));
  DTypeGuard precision(config.precision);
  NoGradGuard no_grad;
  const Tensor ta = read_image_tensor(a).to(config.precision);
  const Tensor tb = read_image_tensor(b).to(config.precision);
  if (ta.shape() != tb.shape()) throw Error("--a and --b have different sizes");
  const std::int64_t h = ta.size(1), w = ta.size(2);
  if (h % 32 != 0 || w % 32 != 0) {
    throw Error("input images must have sides divisible by 32, got " + std::to_string(w) + "x" + std::to_string(h));
  }
  const BinaryMap mask = predict_mask(model->forward(reshape(ta, {1, 3, h, w}), reshape(tb, {1, 3, h, w})));
  Image img(static_cast<int>(w), static_cast<int>(h), 1);
  for (std::size_t i = 0; i < mask.values.size(); ++i) img.pixels[i] = mask.values[i] ? 255 : 0;
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  write_png(out, img);
  std::printf("changed pixels: %lld of %lld (%.2f%%)\n", static_cast<long long>(mask.count_ones()),
              static_cast<long long>(mask.size()), 100.0 * mask.count_ones() / mask.size());
  return 0;
}

int cmd_erf(const std::string& checkpoint, const std::string& data, const std::string& split,
            std::int64_t count, const std::string& out) {
  require_file(checkpoint, "--checkpoint");
  require_dir(data, "--data");
  auto model = load_model(checkpoint);
  const TrainConfig config = checkpoint_config(load_checkpoint(checkpoint));
  DTypeGuard precision(config.precision);
  DiskSource source(load_dataset(data, split));
  if (source.size() == 0) throw Error("split " + split + " has no samples");
  std::vector<ChangePairSample> samples;
  for (std::size_t i = 0; i < std::min<std::size_t>(source.size(), static_cast<std::size_t>(count)); ++i) {
    samples.push_back(source.get(i));
  }
  const Batch batch = collate(samples);
  const ErfMaps maps = effective_receptive_field(*model, batch.image_a, batch.image_b);
  fs::create_directories(out);
  write_heatmap((fs::path(out) / "erf_pre").string(), maps.pre);
  write_heatmap((fs::path(out) / "erf_post").string(), maps.post);
  std::cout << "support above 0.01: pre " << maps.pre.support(0.01) << ", post " << maps.post.support(0.01)
            << " of " << maps.pre.values.size() << " pixels\n";
  return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
  GradCheckOptions opt;
  opt.seed = seed;
  if (const char* env = std::getenv("MCD_PRECISION")) opt.precision = parse_dtype(env);
  int failures = 0;
  run_gradcheck_suite(opt, [&](const GradCheckResult& r) {
    std::printf("%-34s %s  max rel err %.2e  (tol %.0e, %lld entries)\n", r.name.c_str(),
                r.passed() ? "ok  " : "FAIL", r.max_error, r.tolerance, static_cast<long long>(r.entries));
    if (!r.passed()) {
      std::printf("    worst: %s\n", r.worst.c_str());
      ++failures;
    }
    std::fflush(stdout);
  });
  std::printf("%s: %d failing check(s)\n", failures ? "FAILED" : "PASSED", failures);
  return failures ? kUserError : 0;
}

int cmd_account(const std::string& config_path, const std::string& preset, std::int64_t size) {
  ModelConfig model = preset == "reference" ? ModelConfig::reference() : ModelConfig::desk();
  if (!config_path.empty()) {
    require_file(config_path, "--config");
    model = TrainConfig::from_file(config_path).model;
  }
  std::cout << accounting_report(model, size, size);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mamba change detection: data, training, evaluation and analysis"};
  app.require_subcommand(1);

  SyntheticOptions synth;
  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("synth-data", "Write a seeded synthetic bi-temporal dataset");
  synth_cmd->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();
  synth_cmd->add_option("--count", synth.count, "Training pairs")->capture_default_str();
  synth_cmd->add_option("--val-count", synth.val_count, "Validation pairs")->capture_default_str();
  synth_cmd->add_option("--size", synth.size, "Image side, a multiple of 32")->capture_default_str();
  synth_cmd->add_option("--density", synth.density, "Expected changed-pixel fraction")->capture_default_str();
  synth_cmd->add_option("--out", synth_out, "Output root")->required();

  std::string config_path, data, out, resume, checkpoint, split = "val", img_a, img_b;
  auto* train_cmd = app.add_subcommand("train", "Train on <data>/train, validate on <data>/val");
  train_cmd->add_option("--config", config_path, "key = value training config");
  train_cmd->add_option("--data", data, "Dataset root")->required();
  train_cmd->add_option("--out", out, "Output directory")->required();
  train_cmd->add_option("--resume", resume, "Checkpoint to continue from");

  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on a split and write overlays");
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--data", data, "Dataset root")->required();
  eval_cmd->add_option("--split", split, "Split name")->capture_default_str();
  eval_cmd->add_option("--out", out, "Output directory")->required();

  auto* infer_cmd = app.add_subcommand("infer", "Predict a 0/255 change mask for one image pair");
  infer_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  infer_cmd->add_option("--a", img_a, "Pre-change PNG")->required();
  infer_cmd->add_option("--b", img_b, "Post-change PNG")->required();
  infer_cmd->add_option("--out", out, "Output mask PNG")->required();

  std::int64_t erf_count = 8;
  auto* erf_cmd = app.add_subcommand("erf", "Effective receptive field heatmaps for both inputs");
  erf_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  erf_cmd->add_option("--data", data, "Dataset root")->required();
  erf_cmd->add_option("--split", split, "Split name")->capture_default_str();
  erf_cmd->add_option("--count", erf_count, "Pairs averaged")->capture_default_str()->check(CLI::PositiveNumber);
  erf_cmd->add_option("--out", out, "Output directory")->required();

  std::uint64_t grad_seed = 0;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every gradient (MCD_PRECISION=f32|f64)");
  grad_cmd->add_option("--seed", grad_seed, "Seed for the random inputs")->capture_default_str();

  std::string preset = "desk";
  std::int64_t size = 256;
  auto* account_cmd = app.add_subcommand("account", "Parameter and FLOP report");
  account_cmd->add_option("--config", config_path, "key = value config (model keys are read)");
  account_cmd->add_option("--preset", preset, "desk or reference")->check(CLI::IsMember({"desk", "reference"}))->capture_default_str();
  account_cmd->add_option("--size", size, "Input side for the FLOP estimate")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUserError;
  }

  try {
    if (*synth_cmd) return cmd_synth(synth, synth_out);
    if (*train_cmd) return cmd_train(config_path, data, out, resume);
    if (*eval_cmd) return cmd_eval(checkpoint, data, split, out);
    if (*infer_cmd) return cmd_infer(checkpoint, img_a, img_b, out);
    if (*erf_cmd) return cmd_erf(checkpoint, data, split, erf_count, out);
    if (*grad_cmd) return cmd_gradcheck(grad_seed);
    if (*account_cmd) return cmd_account(config_path, preset, size);
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInternalError;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUserError;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kInternalError;
  }
  return kUserError;
}
