#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "relgraph/evaluation.hpp"
#include "relgraph/gradcheck.hpp"
#include "relgraph/trainer.hpp"

namespace py = pybind11;
using namespace relgraph;

namespace {

RunConfig resolve(const std::string& config) {
  if (!config.empty() && config.front() == '{') {
    RunConfig cfg = run_config_from_json(nlohmann::json::parse(config));
    validate(cfg);
    return cfg;
  }
  return load_run_config(config);
}

py::dict scene_dict(const Scene& s) {
  py::dict d;
  d["points"] = s.cloud.coords;
  d["labels"] = s.labels;
  d["boxes"] = s.boxes;
  d["seed"] = s.seed;
  return d;
}

// Synthetic training set plus a trainer, for scripted experiments.
class Pipeline {
 public:
  Pipeline(const std::string& config, std::size_t num_scenes) : cfg_(resolve(config)) {
    for (std::size_t i = 0; i < num_scenes; ++i) scenes_.push_back(synth_scene(cfg_.scene, derive_seed(cfg_.scene.seed, i)));
    trainer_ = std::make_unique<Trainer>(cfg_, scenes_);
  }
  std::vector<double> train_epoch() {
    std::vector<double> out;
    for (const auto& s : trainer_->run_epoch()) out.push_back(s.total());
    return out;
  }
  std::vector<OrientedBox> detect(std::size_t index) const {
    std::vector<OrientedBox> out;
    for (const auto& p : run_detection(trainer_->model(), scenes_.at(index), cfg_.detect.score_thresh,
                                       cfg_.detect.nms_thresh)) {
      out.push_back(p.box);
    }
    return out;
  }
  double mean_ap(double iou) const {
    geom::SceneBoxes dets, gts;
    for (std::size_t i = 0; i < scenes_.size(); ++i) {
      dets.push_back(detect(i));
      gts.push_back(scenes_[i].boxes);
    }
    return geom::mean_average_precision(dets, gts, iou).mean;
  }
  int epoch() const { return trainer_->epoch(); }
  std::string hash() const { return config_hash(cfg_); }
  void save(const std::filesystem::path& p) const { trainer_->save(p); }
  void resume(const std::filesystem::path& p) { trainer_->resume(p); }

 private:
  RunConfig cfg_;
  std::vector<Scene> scenes_;
  std::unique_ptr<Trainer> trainer_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Relation-graph 3D object detection core";

  py::class_<OrientedBox>(m, "OrientedBox")
      .def(py::init<>())
      .def(py::init([](Vec3 c, Vec3 s, double h, int cls, double score) {
             return OrientedBox{c, s, h, cls, score};
           }),
           py::arg("center"), py::arg("size"), py::arg("heading") = 0.0, py::arg("class_id") = 0,
           py::arg("score") = 1.0)
      .def_readwrite("center", &OrientedBox::center)
      .def_readwrite("size", &OrientedBox::size)
      .def_readwrite("heading", &OrientedBox::heading)
      .def_readwrite("class_id", &OrientedBox::class_id)
      .def_readwrite("score", &OrientedBox::score)
      .def("__repr__", [](const OrientedBox& b) {
        return "OrientedBox(center=(" + std::to_string(b.center[0]) + ", " + std::to_string(b.center[1]) + ", " +
               std::to_string(b.center[2]) + "), class_id=" + std::to_string(b.class_id) + ")";
      });

  m.def("iou_3d", &geom::iou_3d, py::arg("a"), py::arg("b"));
  m.def("iou_3d_monte_carlo", &geom::iou_3d_monte_carlo, py::arg("a"), py::arg("b"), py::arg("samples"),
        py::arg("seed"));
  m.def("nms_3d", [](const std::vector<OrientedBox>& b, double t) { return geom::nms_3d(b, t); }, py::arg("boxes"),
        py::arg("iou_thresh"));
  m.def("average_precision", &geom::average_precision, py::arg("dets"), py::arg("gts"), py::arg("class_id"),
        py::arg("iou_thresh"));
  m.def(
      "mean_average_precision",
      [](const geom::SceneBoxes& d, const geom::SceneBoxes& g, double t) {
        const auto r = geom::mean_average_precision(d, g, t);
        return py::make_tuple(r.mean, r.per_class);
      },
      py::arg("dets"), py::arg("gts"), py::arg("iou_thresh"));

  m.def("center_of_mass_loss", py::overload_cast<double>(&relation::center_of_mass_loss), py::arg("mass"));

  m.def("preset_names", &preset_names);
  m.def("config_json", [](const std::string& c) { return to_json(resolve(c)).dump(); }, py::arg("config"));
  m.def("config_hash", [](const std::string& c) { return config_hash(resolve(c)); }, py::arg("config"));
  m.def(
      "parameter_census",
      [](const std::string& c) {
        const Detector d(resolve(c), 0);
        py::dict out;
        out["pool"] = d.pooling_parameters();
        out["relation"] = d.relation_parameters();
        out["total"] = d.store().count("");
        return out;
      },
      py::arg("config"));
  m.def(
      "synth_scene",
      [](const std::string& c, std::size_t index) {
        const RunConfig cfg = resolve(c);
        return scene_dict(synth_scene(cfg.scene, derive_seed(cfg.scene.seed, index)));
      },
      py::arg("config"), py::arg("index"));
  m.def(
      "gradcheck",
      [](const std::string& module, std::size_t probes, std::uint64_t seed) {
        gradcheck::Options opt;
        opt.probes = probes;
        py::list out;
        for (const auto& r : gradcheck::run_suite(module, seed, opt)) {
          py::dict d;
          d["name"] = r.name;
          d["passed"] = r.passed;
          d["max_error"] = r.max_error;
          d["failures"] = r.failures;
          d["redrawn"] = r.skipped;
          out.append(d);
        }
        return out;
      },
      py::arg("module"), py::arg("probes") = 100, py::arg("seed") = 42);

  py::class_<Pipeline>(m, "Pipeline")
      .def(py::init<const std::string&, std::size_t>(), py::arg("config"), py::arg("num_scenes"))
      .def("train_epoch", &Pipeline::train_epoch, py::call_guard<py::gil_scoped_release>())
      .def("detect", &Pipeline::detect, py::arg("index"))
      .def("mean_ap", &Pipeline::mean_ap, py::arg("iou") = 0.25)
      .def("save", &Pipeline::save)
      .def("resume", &Pipeline::resume)
      .def_property_readonly("epoch", &Pipeline::epoch)
      .def_property_readonly("config_hash", &Pipeline::hash);
}
