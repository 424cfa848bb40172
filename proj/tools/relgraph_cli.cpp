// relgraph: synth, train, detect, eval and gradcheck subcommands.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"

#include "relgraph/evaluation.hpp"
#include "relgraph/gradcheck.hpp"
#include "relgraph/trainer.hpp"

namespace fs = std::filesystem;
using namespace relgraph;
using nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::vector<fs::path> scene_files(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return {dir};
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension();
    if (e.is_regular_file() && (ext == ".json" || ext == ".ply") && e.path().filename() != "manifest.json") {
      out.push_back(e.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

int synth(std::size_t n, const std::string& config, const fs::path& out_dir, const std::string& format) {
  const RunConfig cfg = load_run_config(config);
  const std::string hash = config_hash(cfg);
  fs::create_directories(out_dir);
  json manifest = {{"config_hash", hash}, {"config", to_json(cfg)}, {"scenes", json::array()}};
  for (std::size_t i = 0; i < n; ++i) {
    const Scene s = synth_scene(cfg.scene, derive_seed(cfg.scene.seed, i));
    char name[32];
    std::snprintf(name, sizeof name, "scene_%04zu.%s", i, format.c_str());
    if (format == "ply") {
      write_ply(out_dir / name, s);
    } else {
      json doc = scene_to_json(s);
      doc["config_hash"] = hash;
      write_text(out_dir / name, doc.dump() + "\n");
    }
    manifest["scenes"].push_back({{"file", name}, {"seed", s.seed}, {"boxes", scene_to_json(s).at("boxes")}});
  }
  write_text(out_dir / "manifest.json", manifest.dump(1) + "\n");
  std::cout << "wrote " << n << " scenes to " << out_dir.string() << " (config " << hash << ")\n";
  return 0;
}

int train(const std::string& config, const fs::path& data, const fs::path& out,
          const std::optional<fs::path>& resume, std::optional<int> epochs) {
  RunConfig cfg = load_run_config(config);
  if (epochs) cfg.train.epochs = *epochs;
  std::vector<Scene> scenes;
  for (const auto& f : scene_files(data)) scenes.push_back(load_scene(f));
  Trainer trainer(cfg, std::move(scenes));
  if (resume) trainer.resume(*resume);
  std::cout << "config " << config_hash(cfg) << ", " << cfg.train.epochs << " epochs\n";
  trainer.run(out, [](const StepLog& s) {
    std::printf("epoch %d step %llu loss %.6f\n", s.epoch, static_cast<unsigned long long>(s.step), s.total());
  });
  std::cout << "checkpoint " << (out / "final.ckpt.json").string() << "\n";
  return 0;
}

int detect(const fs::path& ckpt, const fs::path& scene_path, const fs::path& out, const std::optional<std::string>& config,
           std::optional<double> nms, std::optional<double> score, const std::optional<fs::path>& graph_dir) {
  std::optional<RunConfig> expected;
  if (config) expected = load_run_config(*config);
  const auto model = load_detector(ckpt, expected ? &*expected : nullptr);
  const auto& cfg = model->config();
  const Scene scene = load_scene(scene_path);
  ForwardPass pass;
  const auto dets = run_detection(*model, scene, score.value_or(cfg.detect.score_thresh),
                                  nms.value_or(cfg.detect.nms_thresh), &pass);
  const std::string hash = config_hash(cfg);
  write_text(out, detections_to_json(dets, hash, scene_path.filename().string()).dump(1) + "\n");
  if (graph_dir) {
    fs::create_directories(*graph_dir);
    for (std::size_t g = 0; g < pass.relation.graphs.size(); ++g) {
      write_text(*graph_dir / ("graph_" + std::to_string(g) + ".csv"),
                 "# config_hash " + hash + "\n" + matrix_csv(pass.relation.graphs[g].weights));
    }
  }
  std::cout << dets.size() << " detections -> " << out.string() << "\n";
  return 0;
}

int eval(const std::vector<fs::path>& det_paths, const std::vector<fs::path>& gt_paths, double iou,
         const std::optional<fs::path>& out, const std::string& config) {
  const auto dets_files = expand_json_paths(det_paths);
  const auto gt_files = expand_json_paths(gt_paths);
  if (dets_files.size() != gt_files.size()) {
    throw std::invalid_argument("eval: " + std::to_string(dets_files.size()) + " detection files but " +
                                std::to_string(gt_files.size()) + " ground-truth files");
  }
  geom::SceneBoxes dets, gts;
  std::string hash;
  for (std::size_t i = 0; i < dets_files.size(); ++i) {
    const json d = read_json(dets_files[i]);
    if (d.is_object() && d.contains("config_hash")) {
      const auto h = d.at("config_hash").get<std::string>();
      if (!hash.empty() && h != hash) throw std::invalid_argument("eval: detection dumps come from different configs");
      hash = h;
    }
    dets.push_back(detections_from_json(d));
    gts.push_back(boxes_from_json(read_json(gt_files[i])));
  }
  const auto result = geom::mean_average_precision(dets, gts, iou);
  std::vector<std::string> names;
  for (const auto& c : load_run_config(config).scene.classes) names.push_back(c.name);
  const std::string table = "# config_hash " + (hash.empty() ? std::string("unknown") : hash) + "\n" + ap_table_csv(result, names);
  if (out) write_text(*out, table);
  std::cout << table;
  std::printf("mAP@%.2f %.6f over %zu scenes\n", iou, result.mean, dets.size());
  return 0;
}

int gradcheck_cmd(const std::string& module, std::size_t probes, std::uint64_t seed) {
  gradcheck::Options opt;
  opt.probes = probes;
  bool ok = true;
  for (const auto& r : gradcheck::run_suite(module, seed, opt)) {
    std::printf("%-34s %s probes=%zu failures=%zu redrawn=%zu max_rel_err=%.3e\n", r.name.c_str(),
                r.passed ? "PASS" : "FAIL", r.probes, r.failures, r.skipped, r.max_error);
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Relation-graph 3D object detector"};
  app.require_subcommand(1);

  auto* s = app.add_subcommand("synth", "generate synthetic scenes");
  std::size_t n = 20;
  std::string s_config = "desk", s_format = "json";
  fs::path s_out;
  s->add_option("--n", n, "number of scenes")->required();
  s->add_option("--config", s_config, "preset name or config JSON");
  s->add_option("--out-dir", s_out)->required();
  s->add_option("--format", s_format)->check(CLI::IsMember({"json", "ply"}));

  auto* t = app.add_subcommand("train", "train a detector");
  std::string t_config = "desk";
  fs::path t_data, t_out;
  std::optional<fs::path> t_resume;
  std::optional<int> t_epochs;
  t->add_option("--config", t_config);
  t->add_option("--data", t_data, "scene file or directory")->required();
  t->add_option("--out", t_out, "output directory")->required();
  t->add_option("--resume", t_resume, "checkpoint to continue from");
  t->add_option("--epochs", t_epochs, "override the configured epoch count");

  auto* d = app.add_subcommand("detect", "run detection on one scene");
  fs::path d_ckpt, d_scene, d_out;
  std::optional<std::string> d_config;
  std::optional<double> d_nms, d_score;
  std::optional<fs::path> d_graph;
  d->add_option("--ckpt", d_ckpt)->required();
  d->add_option("--scene", d_scene)->required();
  d->add_option("--out", d_out)->required();
  d->add_option("--config", d_config, "must hash-match the checkpoint");
  d->add_option("--nms", d_nms, "NMS IoU threshold");
  d->add_option("--score", d_score, "minimum objectness score");
  d->add_option("--dump-graph", d_graph, "directory for per-graph alpha CSVs");

  auto* e = app.add_subcommand("eval", "per-class AP and mAP");
  std::vector<fs::path> e_dets, e_gt;
  double e_iou = 0.25;
  std::optional<fs::path> e_out;
  std::string e_config = "desk";
  e->add_option("--dets", e_dets, "detection dumps or a directory")->required();
  e->add_option("--gt", e_gt, "ground-truth scene JSONs or a directory")->required();
  e->add_option("--iou", e_iou)->check(CLI::IsMember({0.25, 0.5}));
  e->add_option("--out", e_out, "CSV output");
  e->add_option("--config", e_config, "class names source");

  auto* g = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  std::string g_module = "all";
  std::size_t g_probes = 100;
  std::uint64_t g_seed = 42;
  auto names = gradcheck::suite_names();
  names.push_back("all");
  g->add_option("--module", g_module)->check(CLI::IsMember(names));
  g->add_option("--probes", g_probes);
  g->add_option("--seed", g_seed);

  CLI11_PARSE(app, argc, argv);
  try {
    if (s->parsed()) return synth(n, s_config, s_out, s_format);
    if (t->parsed()) return train(t_config, t_data, t_out, t_resume, t_epochs);
    if (d->parsed()) return detect(d_ckpt, d_scene, d_out, d_config, d_nms, d_score, d_graph);
    if (e->parsed()) return eval(e_dets, e_gt, e_iou, e_out, e_config);
    if (g->parsed()) return gradcheck_cmd(g_module, g_probes, g_seed);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  }
  return 0;
}
