// SPDX-License-Identifier: Apache-2.0
#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "demo/config.hpp"
#include "demo/errors.hpp"
#include "demo/evaluation.hpp"
#include "demo/losses.hpp"
#include "demo/trainer.hpp"

namespace py = pybind11;
using namespace demo;

namespace {

using Images = py::array_t<double, py::array::c_style | py::array::forcecast>;

ExperimentConfig make_config(const std::map<std::string, std::string>& settings) {
  ExperimentConfig c;
  for (const auto& [k, v] : settings) set_config_value(c, k, v);
  return c;
}

ImageStack to_stack(const Images& a) {
  if (a.ndim() != 4) throw InputError("images must be shaped (n, channels, height, width)");
  ImageStack st(a.shape(0), a.shape(1), a.shape(2), a.shape(3));
  std::copy_n(a.data(), st.data.size(), st.data.begin());
  return st;
}

class PyModel {
 public:
  explicit PyModel(std::unique_ptr<DeMoModel> model) : model_(std::move(model)) {}

  py::dict forward(const Images& rgb, const Images& nir, const Images& tir) const {
    ModalImages images{to_stack(rgb), to_stack(nir), to_stack(tir)};
    ForwardResult r;
    {
      py::gil_scoped_release release;
      NoGradGuard guard;
      r = model_->forward(images, RunMode{false, false});
    }
    py::dict out;
    out["descriptor"] = model_->descriptor(r);
    out["joint"] = r.joint.value();
    py::list modality;
    for (const auto& f : r.modality) modality.append(f.value());
    out["modality"] = modality;
    if (r.atmoe) out["gates"] = r.atmoe->gate.value();
    return out;
  }

  const DeMoModel& get() const { return *model_; }

 private:
  std::unique_ptr<DeMoModel> model_;
};

FeatureSet feature_set(const Mat& f, std::vector<std::int64_t> ids, std::vector<std::int64_t> cams) {
  return FeatureSet{f, std::move(ids), std::move(cams)};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "DeMo multi-modal re-identification core";

  auto base = py::register_exception<Error>(m, "DemoError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<InputError>(m, "InputError", base.ptr());
  py::register_exception<IngestionError>(m, "IngestionError", base.ptr());
  py::register_exception<CheckpointError>(m, "CheckpointError", base.ptr());
  py::register_exception<EvaluationError>(m, "EvaluationError", base.ptr());
  py::register_exception<SamplingError>(m, "SamplingError", base.ptr());

  m.def("config_keys", [] {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& k : config_keys()) out.emplace_back(k.name, k.doc);
    return out;
  });
  m.def("default_config", [] { return to_key_values(ExperimentConfig{}); });

  m.def(
      "synthesize",
      [](const std::filesystem::path& root, const std::map<std::string, std::string>& settings) {
        const ExperimentConfig c = make_config(settings);
        generate_synthetic(c.synth, root);
        return load_dataset(root).summary();
      },
      py::arg("root"), py::arg("settings") = std::map<std::string, std::string>{},
      "Render a synthetic dataset; settings use synth.* keys.");

  m.def(
      "train",
      [](const std::map<std::string, std::string>& settings) {
        ExperimentConfig c = make_config(settings);
        if (settings.count("output.dir")) c.train.output_dir = resolve_output_dir(c.output_dir);
        const auto& enc = c.train.model.encoder;
        TrainResult r;
        {
          py::gil_scoped_release release;
          ImageDataset ds(load_dataset(c.data_root), enc.image_height, enc.image_width);
          r = train(c.train, ds);
        }
        py::dict out;
        std::vector<double> losses;
        for (const auto& s : r.steps) losses.push_back(s.total);
        out["losses"] = losses;
        out["final_map"] = r.final_map;
        out["final_rank1"] = r.final_rank1;
        out["best_map"] = r.best_map;
        out["best_epoch"] = r.best_epoch;
        return out;
      },
      py::arg("settings"), "Train on data.root with section.key settings.");

  py::class_<PyModel>(m, "Model")
      .def(py::init([](const std::map<std::string, std::string>& settings) {
             return PyModel(build_model(make_config(settings).train.model));
           }),
           py::arg("settings") = std::map<std::string, std::string>{})
      .def_static("load", [](const std::filesystem::path& p) {
        return PyModel(std::move(load_checkpoint(p).model));
      })
      .def_property_readonly("variant", [](const PyModel& m) { return std::string(1, m.get().config().variant()); })
      .def_property_readonly("parameter_count", [](const PyModel& m) { return m.get().parameter_count(); })
      .def_property_readonly("descriptor_dim", [](const PyModel& m) { return m.get().descriptor_dim(); })
      .def("forward", &PyModel::forward, py::arg("rgb"), py::arg("nir"), py::arg("tir"),
           "Eval-mode forward pass on (n, channels, height, width) arrays.");

  m.def(
      "ce_label_smooth",
      [](const Mat& logits, const std::vector<std::int64_t>& labels, double smoothing) {
        return ce_label_smooth(logits, labels, smoothing);
      },
      py::arg("logits"), py::arg("labels"), py::arg("smoothing") = 0.1);
  m.def(
      "triplet_batch_hard",
      [](const Mat& embeddings, const std::vector<std::int64_t>& labels, double margin) {
        return triplet_batch_hard(embeddings, labels, margin);
      },
      py::arg("embeddings"), py::arg("labels"), py::arg("margin") = 0.3);

  m.def(
      "evaluate",
      [](const Mat& query, std::vector<std::int64_t> qids, std::vector<std::int64_t> qcams,
         const Mat& gallery, std::vector<std::int64_t> gids, std::vector<std::int64_t> gcams,
         const std::string& metric, bool normalize, Index max_rank) {
        const RetrievalResult r =
            evaluate(feature_set(query, std::move(qids), std::move(qcams)),
                     feature_set(gallery, std::move(gids), std::move(gcams)),
                     EvalOptions{parse_metric(metric), normalize, max_rank});
        py::dict out;
        out["map"] = r.map;
        out["cmc"] = r.cmc;
        out["valid_queries"] = r.valid_queries;
        out["skipped_queries"] = r.skipped_queries;
        return out;
      },
      py::arg("query"), py::arg("query_ids"), py::arg("query_cams"), py::arg("gallery"),
      py::arg("gallery_ids"), py::arg("gallery_cams"), py::arg("metric") = "euclidean",
      py::arg("normalize") = true, py::arg("max_rank") = 50);
}
