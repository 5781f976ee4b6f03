// SPDX-License-Identifier: Apache-2.0

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "uniformer/analysis.hpp"
#include "uniformer/gradcheck.hpp"
#include "uniformer/model.hpp"
#include "uniformer/pipeline.hpp"
#include "uniformer/tensor_io.hpp"

namespace py = pybind11;
using namespace uniformer;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  std::vector<double> values(a.data(), a.data() + a.size());
  return Tensor(std::move(shape), std::move(values));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

py::list plan_views(const SamplingPlan& p) {
  py::list views;
  for (const auto& v : p.views) views.append(py::cast(v.frames));
  return views;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of the uniformer package";

  py::register_exception<Error>(m, "UniformerError", PyExc_ValueError);

  // Configuration
  m.def("preset_names", &preset_names);
  m.def("config_json", [](const std::string& name_or_path) { return config_to_json(load_config(name_or_path)); },
        py::arg("name_or_path"));
  m.def("normalize_config_json", [](const std::string& text) { return config_to_json(parse_config(text)); },
        py::arg("json_text"));

  // Analysis
  m.def("count_params", [](const std::string& json) { return count_params(parse_config(json)); }, py::arg("config_json"));
  m.def(
      "count_flops",
      [](const std::string& json, const Shape& input, std::size_t views) {
        const CostReport r = count_flops(parse_config(json), input, views);
        py::list layers;
        for (const auto& l : r.layers) {
          layers.append(py::dict(py::arg("name") = l.name, py::arg("out_shape") = l.out_shape,
                                 py::arg("params") = l.params, py::arg("flops") = l.flops,
                                 py::arg("category") = cost_category_name(l.category)));
        }
        return py::dict(py::arg("layers") = layers, py::arg("views") = r.views,
                        py::arg("params") = r.total_params(), py::arg("flops_per_view") = r.single_view_flops(),
                        py::arg("flops") = r.total_flops(), py::arg("csv") = r.to_csv());
      },
      py::arg("config_json"), py::arg("input"), py::arg("views") = 1);
  m.def(
      "shape_trace", [](const std::string& json, const Shape& input) { return shape_trace(parse_config(json), input); },
      py::arg("config_json"), py::arg("input"));

  // Model
  py::class_<UniFormer>(m, "Model")
      .def(py::init([](const std::string& json, std::uint64_t seed) { return UniFormer(parse_config(json), seed); }),
           py::arg("config_json"), py::arg("seed") = 0)
      .def(
          "forward",
          [](UniFormer& self, const Array& x, bool train, std::uint64_t seed) {
            NoGradGuard guard;
            Rng rng(seed);
            return to_array(self.forward(to_tensor(x), train ? Mode::train : Mode::eval, rng));
          },
          py::arg("x"), py::arg("train") = false, py::arg("seed") = 0)
      .def(
          "trace",
          [](UniFormer& self, const Array& x) {
            NoGradGuard guard;
            std::vector<std::pair<std::string, Shape>> out;
            self.forward(to_tensor(x), Mode::eval,
                         [&](const std::string& name, const Tensor& t) { out.emplace_back(name, t.shape()); });
            return out;
          },
          py::arg("x"))
      .def("parameters",
           [](UniFormer& self) {
             py::dict out;
             for (auto& slot : self.parameters()) out[py::str(slot.name)] = to_array(*slot.tensor);
             return out;
           })
      .def("count_params", [](UniFormer& self) { return count_params(self); })
      .def("config_json", [](const UniFormer& self) { return config_to_json(self.config()); })
      .def("save", [](UniFormer& self, const std::string& path) { save_params(self, path); }, py::arg("path"))
      .def("load", [](UniFormer& self, const std::string& path) { load_params(self, path); }, py::arg("path"))
      .def(
          "gradcheck",
          [](UniFormer& self, const Array& x, std::size_t samples, double tolerance, std::uint64_t seed) {
            std::vector<Tensor> inputs{to_tensor(x)};
            std::vector<std::string> names{"input"};
            for (auto& slot : self.parameters()) {
              if (!slot.trainable) continue;
              inputs.push_back(*slot.tensor);
              names.push_back(slot.name);
            }
            auto f = [&self](const std::vector<Tensor>& in) {
              UniFormer local = self;
              ParamList ps = local.parameters();
              std::size_t i = 1;
              for (auto& slot : ps) {
                if (slot.trainable) *slot.tensor = in[i++];
                else *slot.tensor = slot.tensor->clone();
              }
              return local.forward(in[0], Mode::train);
            };
            GradcheckOptions opts;
            opts.tolerance = tolerance;
            opts.max_checks_per_input = samples;
            opts.seed = seed;
            const GradcheckReport r = gradcheck(f, inputs, opts, names);
            return py::dict(py::arg("passed") = r.passed, py::arg("max_rel_error") = r.max_rel_error(),
                            py::arg("summary") = r.summary());
          },
          py::arg("x"), py::arg("samples") = 4, py::arg("tolerance") = 1e-4, py::arg("seed") = 0);

  m.def("inflate_2d", [](const Array& w, std::size_t kt) { return to_array(inflate_2d(to_tensor(w), kt)); },
        py::arg("weights"), py::arg("kt"));

  // Tensor files
  m.def("save_tensor", [](const std::string& path, const Array& a) { save_tensor(path, to_tensor(a)); },
        py::arg("path"), py::arg("array"));
  m.def("load_tensor", [](const std::string& path) { return to_array(load_tensor(path)); }, py::arg("path"));

  // Pipeline
  m.def(
      "dense_sample",
      [](std::size_t len, std::size_t n, std::size_t stride, std::size_t clips, std::size_t crops) {
        return plan_views(dense_sample(len, n, stride, clips, crops));
      },
      py::arg("video_len"), py::arg("frames"), py::arg("stride"), py::arg("clips") = 1, py::arg("crops") = 1);
  m.def(
      "uniform_sample",
      [](std::size_t len, std::size_t segments, const std::string& mode, std::uint64_t seed) {
        if (mode != "center" && mode != "random") throw Error("mode must be 'center' or 'random'");
        return plan_views(uniform_sample(len, segments, mode == "center" ? UniformMode::center : UniformMode::random, seed));
      },
      py::arg("video_len"), py::arg("segments"), py::arg("mode") = "center", py::arg("seed") = 0);
  m.def("lr_at", &lr_at, py::arg("step"), py::arg("total_steps"), py::arg("warmup_steps"), py::arg("base_lr"));
  m.def(
      "multi_view_average",
      [](const std::vector<Array>& logits) {
        std::vector<Tensor> views;
        for (const auto& a : logits) views.push_back(to_tensor(a));
        return to_array(multi_view_average(views));
      },
      py::arg("logits"));
  m.def(
      "train_toy",
      [](const std::string& model_json, const std::string& train_json, std::size_t classes,
         std::size_t clips_per_class, const Shape& clip_shape) {
        const TrainConfig tc = parse_train_config(train_json);
        UniFormer model(parse_config(model_json), tc.seed);
        const SyntheticDataset data = make_synthetic_dataset(classes, clips_per_class, clip_shape, tc.seed);
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train_toy(model, data, tc);
        }
        py::list log;
        for (const auto& s : r.log) log.append(py::make_tuple(s.step, s.lr, s.loss, s.acc));
        return py::dict(py::arg("log") = log, py::arg("accuracy") = r.final_accuracy, py::arg("steps") = r.steps);
      },
      py::arg("model_json"), py::arg("train_json"), py::arg("classes") = 4, py::arg("clips_per_class") = 2,
      py::arg("clip_shape") = Shape{3, 8, 32, 32});
  m.def("default_train_config_json", [] { return train_config_to_json(TrainConfig{}); });
}
