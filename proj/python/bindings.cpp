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
// Python surface: models, data generation, training, metrics and the scan.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <string>
#include <vector>

#include "mcd/analysis.hpp"
#include "mcd/decoder.hpp"
#include "mcd/difference.hpp"
#include "mcd/metrics.hpp"
#include "mcd/ssm.hpp"
#include "mcd/trainer.hpp"

namespace py = pybind11;
using namespace mcd;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor::from_values(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  const auto v = t.values();
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

// Parsed through the training config so misspelled keys are rejected.
ModelConfig model_config(const std::map<std::string, std::string>& overrides) {
  return TrainConfig::from_key_values(overrides).model;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Change detection with visual state space encoders";

  // Translators registered later are tried first, so the base class goes first.
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_IOError);

  py::class_<ConfusionCounts>(m, "ConfusionCounts")
      .def(py::init([](std::int64_t tp, std::int64_t fp, std::int64_t fn, std::int64_t tn) {
             return ConfusionCounts{tp, fp, fn, tn};
           }),
           py::arg("tp"), py::arg("fp"), py::arg("fn"), py::arg("tn"))
      .def_readwrite("tp", &ConfusionCounts::tp)
      .def_readwrite("fp", &ConfusionCounts::fp)
      .def_readwrite("fn", &ConfusionCounts::fn)
      .def_readwrite("tn", &ConfusionCounts::tn)
      .def_property_readonly("f1", &f1_score)
      .def_property_readonly("iou", &iou_score)
      .def_property_readonly("oa", &overall_accuracy);

  m.def(
      "selective_scan",
      [](const Array& x, const Array& delta, const Array& a, const Array& b, const Array& c,
         const Array& d, const std::string& mode) {
        DTypeGuard f64(DType::kF64);
        NoGradGuard no_grad;
        return to_array(selective_scan(to_tensor(x), to_tensor(delta), to_tensor(a), to_tensor(b),
                                       to_tensor(c), to_tensor(d), parse_discretization(mode)));
      },
      py::arg("x"), py::arg("delta"), py::arg("a"), py::arg("b"), py::arg("c"), py::arg("d"),
      py::arg("mode") = "taylor",
      "x, delta: [B, L, D]; a: [D, N]; b, c: [B, L, N]; d: [D]. Returns y: [B, L, D].");

  m.def(
      "write_synthetic",
      [](const std::string& root, std::uint64_t seed, std::int64_t count, std::int64_t size,
         double density, std::int64_t val_count) {
        write_synthetic(root, {.seed = seed, .count = count, .size = size, .density = density,
                               .val_count = val_count});
      },
      py::arg("root"), py::arg("seed") = 7, py::arg("count") = 64, py::arg("size") = 64,
      py::arg("density") = 0.1, py::arg("val_count") = 16);

  py::class_<MambaChangeDetector>(m, "ChangeDetector")
      .def(py::init([](const std::map<std::string, std::string>& config, std::uint64_t seed) {
             return std::make_unique<MambaChangeDetector>(model_config(config), seed);
           }),
           py::arg("config") = std::map<std::string, std::string>{}, py::arg("seed") = 0,
           "config: string overrides of the desk settings, e.g. {'c1': '8', 'fusion': 'difference'}.")
      .def_static(
          "load", [](const std::string& path) { return load_model(path); }, py::arg("path"))
      .def(
          "forward",
          [](const MambaChangeDetector& model, const Array& pre, const Array& post) {
            NoGradGuard no_grad;
            return to_array(model.forward(to_tensor(pre), to_tensor(post)));
          },
          py::arg("pre"), py::arg("post"), "Images [B, 3, H, W] in [0, 1] -> logits [B, 2, H, W].")
      .def(
          "predict",
          [](const MambaChangeDetector& model, const Array& pre, const Array& post) {
            NoGradGuard no_grad;
            const BinaryMap mask = predict_mask(model.forward(to_tensor(pre), to_tensor(post)));
            py::array_t<std::uint8_t> out({mask.batch, mask.height, mask.width});
            std::copy(mask.values.begin(), mask.values.end(), out.mutable_data());
            return out;
          },
          py::arg("pre"), py::arg("post"), "Binary change mask [B, H, W].")
      .def("parameter_count", &MambaChangeDetector::parameter_count);

  m.def(
      "train",
      [](const std::string& data_root, const std::string& out_dir,
         const std::map<std::string, std::string>& config) {
        TrainConfig cfg = TrainConfig::from_key_values(config);
        DiskSource train(load_dataset(data_root, "train"));
        DiskSource val(load_dataset(data_root, "val"));
        Trainer trainer(cfg);
        std::vector<double> losses;
        for (const auto& r : trainer.run(train, val.size() ? &val : nullptr, out_dir))
          losses.push_back(r.loss);
        return losses;
      },
      py::arg("data_root"), py::arg("out_dir"),
      py::arg("config") = std::map<std::string, std::string>{},
      "Trains on data_root/{train,val}; returns the per-step losses.");

  m.def(
      "evaluate",
      [](const MambaChangeDetector& model, const std::string& data_root, const std::string& split) {
        return evaluate(model, DiskSource(load_dataset(data_root, split))).counts;
      },
      py::arg("model"), py::arg("data_root"), py::arg("split") = "val");

  m.def(
      "accounting_report",
      [](const std::map<std::string, std::string>& config, std::int64_t height, std::int64_t width) {
        return accounting_report(model_config(config), height, width);
      },
      py::arg("config") = std::map<std::string, std::string>{}, py::arg("height") = 256,
      py::arg("width") = 256);
}
