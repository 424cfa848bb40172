#include "relgraph/config.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "relgraph/scene.hpp"

namespace relgraph {

using nlohmann::json;

namespace {

template <typename T>
void read(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

json sa_to_json(const backbone::SaSpec& s) {
  return {{"centers", s.centers}, {"radius", s.radius}, {"group", s.group}, {"mlp", s.mlp}};
}

backbone::SaSpec sa_from_json(const json& j) {
  backbone::SaSpec s;
  read(j, "centers", s.centers);
  read(j, "radius", s.radius);
  read(j, "group", s.group);
  read(j, "mlp", s.mlp);
  return s;
}

std::string mode_name(relation::PositionMode m) { return m == relation::PositionMode::mask ? "mask" : "encoding"; }

relation::PositionMode mode_from(const std::string& s) {
  if (s == "mask") return relation::PositionMode::mask;
  if (s == "encoding") return relation::PositionMode::encoding;
  throw std::invalid_argument("position_mode must be \"mask\" or \"encoding\", got \"" + s + "\"");
}

ClassSpec cuboid(const std::string& name, Vec3 size) {
  ClassSpec c;
  c.name = name;
  c.base_size = size;
  return c;
}

RunConfig desk() {
  RunConfig cfg;
  cfg.preset = "desk";
  cfg.scene = default_scene_config();
  auto& m = cfg.model;
  m.backbone.num_points = 2048;
  m.backbone.sa = {{512, 0.2, 16, {16, 16, 32}},
                   {256, 0.4, 16, {32, 32, 64}},
                   {128, 0.8, 16, {64, 64, 64}},
                   {64, 1.2, 16, {64, 64, 64}}};
  m.backbone.fp = {{64, 64}, {64, 64}};
  m.seed_hidden = {64};
  m.num_heading_bins = 12;
  m.num_size_templates = 4;
  m.num_classes = 4;
  m.size_templates = class_templates(cfg.scene);
  m.num_proposals = 32;
  m.cluster_radius = 0.3;
  m.cluster_group = 16;
  m.cluster_mlp = {64, 64};
  m.head_hidden = {64};
  m.num_interior = 16;
  m.d2 = 64;
  m.d_s = 16;
  m.d_l = 8;
  m.d_a = 64;
  m.d_p = 64;
  m.num_graphs = 3;
  auto& t = cfg.train;
  t.epochs = 600;
  t.batch_size = 2;
  t.adam.learning_rate = 3e-3;
  t.adam.schedule = {{420, 0.3}, {540, 0.3}};
  t.weights = {0.4, 1.0, 0.2, 0.0};
  return cfg;
}

RunConfig paper(bool scannet) {
  RunConfig cfg = desk();
  cfg.preset = scannet ? "paper-scannet" : "paper-sun";
  // Class sizes are typical indoor extents (length, width, height).
  if (scannet) {
    cfg.scene.classes = {
        cuboid("cabinet", {0.8, 0.5, 1.0}),       cuboid("bed", {2.0, 1.6, 0.9}),
        cuboid("chair", {0.6, 0.6, 0.85}),        cuboid("sofa", {1.9, 0.9, 0.85}),
        cuboid("table", {1.2, 0.8, 0.75}),        cuboid("door", {1.0, 0.2, 2.0}),
        cuboid("window", {1.2, 0.2, 1.2}),        cuboid("bookshelf", {1.0, 0.4, 1.8}),
        cuboid("picture", {0.8, 0.1, 0.6}),       cuboid("counter", {2.0, 0.6, 0.9}),
        cuboid("desk", {1.4, 0.7, 0.75}),         cuboid("curtain", {1.8, 0.2, 2.0}),
        cuboid("refrigerator", {0.8, 0.7, 1.8}),  cuboid("showercurtain", {1.2, 0.2, 1.8}),
        cuboid("toilet", {0.7, 0.45, 0.75}),      cuboid("sink", {0.6, 0.5, 0.3}),
        cuboid("bathtub", {1.6, 0.8, 0.55}),      cuboid("garbagebin", {0.4, 0.4, 0.6})};
  } else {
    cfg.scene.classes = {
        cuboid("bed", {2.114, 1.620, 0.927}),     cuboid("table", {0.791, 1.280, 0.718}),
        cuboid("sofa", {0.924, 1.867, 0.845}),    cuboid("chair", {0.592, 0.553, 0.827}),
        cuboid("toilet", {0.699, 0.454, 0.756}),  cuboid("desk", {0.695, 1.346, 0.736}),
        cuboid("dresser", {0.529, 1.003, 1.173}), cuboid("night_stand", {0.501, 0.632, 0.683}),
        cuboid("bookshelf", {0.405, 1.071, 1.689}), cuboid("bathtub", {0.766, 1.398, 0.473})};
  }
  cfg.scene.num_points = 20000;
  cfg.scene.room = {8.0, 8.0, 3.0};
  auto& m = cfg.model;
  m.backbone.num_points = 20000;
  m.backbone.sa = {{2048, 0.2, 64, {64, 64, 128}},
                   {1024, 0.4, 32, {128, 128, 256}},
                   {512, 0.8, 16, {128, 128, 256}},
                   {256, 1.2, 16, {128, 128, 256}}};
  m.backbone.fp = {{256, 256}, {256, 256}};
  m.seed_hidden = {256, 256};
  m.num_heading_bins = 12;
  m.num_size_templates = m.num_classes = scannet ? 18 : 10;
  m.size_templates = class_templates(cfg.scene);
  m.num_proposals = 256;
  m.cluster_radius = 0.3;
  m.cluster_group = 16;
  m.cluster_mlp = {128, 128, 128};
  m.head_hidden = {128, 128};
  m.num_interior = 128;
  m.d2 = 256;
  m.d_s = 64;
  m.d_l = 32;
  m.d_p = 256;
  m.d_a = 256;
  m.num_graphs = 3;
  auto& t = cfg.train;
  t.epochs = 180;
  t.batch_size = 6;
  t.adam.learning_rate = 1e-3;
  t.adam.schedule = {{100, 0.1}, {160, 0.1}};
  t.weights = {0.4, 1.0, 0.2, 0.0};
  return cfg;
}

}  // namespace

SceneConfig default_scene_config() {
  SceneConfig s;
  s.classes = {{"chair"}, {"table"}, {"sofa"}, {"cabinet"}};
  return s;
}

double RunConfig::effective_delta() const {
  return model.delta > 0.0 ? model.delta : relation::delta_from_extent(scene.room);
}

std::vector<std::string> preset_names() { return {"desk", "base", "paper-sun", "paper-scannet"}; }

RunConfig preset(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "base") {
    RunConfig cfg = desk();
    cfg.preset = "base";
    cfg.model.num_graphs = 0;
    cfg.train.weights = {0.5, 1.0, 0.1, 0.0};
    return cfg;
  }
  if (name == "paper-sun") return paper(false);
  if (name == "paper-scannet") return paper(true);
  throw std::invalid_argument("unknown preset \"" + name + "\"");
}

void validate(const RunConfig& cfg) {
  const auto fail = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
  const auto& s = cfg.scene;
  const auto& m = cfg.model;
  const auto& t = cfg.train;
  if (!(s.room[0] > 0 && s.room[1] > 0 && s.room[2] > 0)) fail("room extents must be positive");
  if (s.min_objects < 1 || s.max_objects < s.min_objects) fail("object count range must satisfy 1 <= min <= max");
  if (!(s.density > 0.0)) fail("density must be positive");
  if (s.num_points == 0) fail("num_points must be positive");
  if (s.floor_fraction < 0.0 || s.floor_fraction >= 1.0) fail("floor_fraction must be in [0, 1)");
  if (s.noise_sigma < 0.0 || s.box_margin < 0.0) fail("noise_sigma and box_margin must be non-negative");
  if (s.partial_fraction < 0.0 || s.partial_fraction >= 1.0) fail("partial_fraction must be in [0, 1)");
  if (s.classes.size() != m.num_classes) fail("class catalog size must equal NC");
  if (m.backbone.num_points != s.num_points) fail("backbone num_points must match the scene point count");
  if (m.backbone.sa.empty() || m.backbone.fp.empty() || m.backbone.fp.size() >= m.backbone.sa.size()) {
    fail("backbone needs SA layers and fewer FP layers");
  }
  if (m.num_heading_bins == 0 || m.num_size_templates == 0 || m.num_classes == 0) fail("NH, NS, NC must be positive");
  if (m.size_templates.size() != m.num_size_templates) fail("need exactly NS size templates");
  for (const auto& tpl : m.size_templates) {
    if (!(tpl[0] > 0 && tpl[1] > 0 && tpl[2] > 0)) fail("size templates must be positive");
  }
  if (m.num_proposals == 0 || m.num_proposals > m.backbone.seed_count()) fail("K_c must be in [1, M]");
  if (m.cluster_mlp.empty()) fail("cluster_mlp must be non-empty");
  if (m.num_interior == 0) fail("N_R must be positive");
  if (m.d2 == 0 || m.d_s == 0 || m.d_l == 0 || m.d_a == 0 || m.d_p == 0 || m.d_p % 2 != 0) {
    fail("d2, d_s, d_l, d_a must be positive and d_p positive and even");
  }
  if (m.position_mode == relation::PositionMode::mask && !(cfg.effective_delta() > 0.0)) fail("delta must be positive");
  if (t.epochs < 0) fail("epochs must be non-negative");
  if (t.batch_size == 0) fail("batch_size must be positive");
  if (!(t.adam.learning_rate > 0.0)) fail("learning rate must be positive");
  if (t.weights.obj < 0 || t.weights.box < 0 || t.weights.sem < 0 || t.weights.sup < 0) fail("loss weights must be >= 0");
  if (t.weights.sup > 0.0 && !t.supervised_graph) fail("lambda4 > 0 requires supervised_graph");
  if (t.supervised_graph && m.num_graphs == 0) fail("supervised_graph requires at least one graph");
  if (!(t.near_thresh > 0.0 && t.near_thresh < t.far_thresh)) fail("objectness thresholds must satisfy 0 < near < far");
  if (t.direction_sign != 1.0 && t.direction_sign != -1.0) fail("direction_sign must be 1 or -1");
  if (cfg.detect.nms_thresh < 0.0 || cfg.detect.nms_thresh > 1.0) fail("nms_thresh must be in [0, 1]");
}

json to_json(const RunConfig& cfg) {
  const auto& s = cfg.scene;
  json classes = json::array();
  for (const auto& c : s.classes) {
    classes.push_back({{"name", c.name}, {"scale_min", c.scale_min}, {"scale_max", c.scale_max},
                       {"base_size", c.base_size}});
  }
  const auto& m = cfg.model;
  json sa = json::array();
  for (const auto& l : m.backbone.sa) sa.push_back(sa_to_json(l));
  const auto& t = cfg.train;
  return {
      {"preset", cfg.preset},
      {"scene",
       {{"room", s.room},
        {"classes", classes},
        {"min_objects", s.min_objects},
        {"max_objects", s.max_objects},
        {"density", s.density},
        {"floor_fraction", s.floor_fraction},
        {"num_points", s.num_points},
        {"noise_sigma", s.noise_sigma},
        {"box_margin", s.box_margin},
        {"partial_fraction", s.partial_fraction},
        {"max_overlap", s.max_overlap},
        {"chair_near_table", s.chair_near_table},
        {"max_retries", s.max_retries},
        {"seed", s.seed}}},
      {"model",
       {{"backbone", {{"num_points", m.backbone.num_points}, {"sa", sa}, {"fp", m.backbone.fp}}},
        {"seed_hidden", m.seed_hidden},
        {"num_heading_bins", m.num_heading_bins},
        {"num_size_templates", m.num_size_templates},
        {"num_classes", m.num_classes},
        {"size_templates", m.size_templates},
        {"num_proposals", m.num_proposals},
        {"cluster_radius", m.cluster_radius},
        {"cluster_group", m.cluster_group},
        {"cluster_mlp", m.cluster_mlp},
        {"head_hidden", m.head_hidden},
        {"num_interior", m.num_interior},
        {"d2", m.d2},
        {"d_s", m.d_s},
        {"d_l", m.d_l},
        {"d_a", m.d_a},
        {"d_p", m.d_p},
        {"num_graphs", m.num_graphs},
        {"position_mode", mode_name(m.position_mode)},
        {"delta", m.delta},
        {"eq5_literal", m.eq5_literal}}},
      {"train",
       {{"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"learning_rate", t.adam.learning_rate},
        {"beta1", t.adam.beta1},
        {"beta2", t.adam.beta2},
        {"eps", t.adam.eps},
        {"schedule", t.adam.schedule},
        {"lambda1", t.weights.obj},
        {"lambda2", t.weights.box},
        {"lambda3", t.weights.sem},
        {"lambda4", t.weights.sup},
        {"supervised_graph", t.supervised_graph},
        {"near_thresh", t.near_thresh},
        {"far_thresh", t.far_thresh},
        {"direction_sign", t.direction_sign},
        {"use_direction", t.use_direction},
        {"augment", t.augment},
        {"resample_plans", t.resample_plans},
        {"checkpoint_every", t.checkpoint_every},
        {"checked", t.checked},
        {"seed", t.seed}}},
      {"detect", {{"nms_thresh", cfg.detect.nms_thresh}, {"score_thresh", cfg.detect.score_thresh}}},
  };
}

RunConfig run_config_from_json(const json& doc) {
  if (!doc.is_object()) throw std::invalid_argument("config: expected a JSON object");
  RunConfig cfg = preset(doc.value("preset", std::string("desk")));
  if (doc.contains("scene")) {
    const auto& j = doc.at("scene");
    auto& s = cfg.scene;
    read(j, "room", s.room);
    if (j.contains("classes")) {
      s.classes.clear();
      for (const auto& c : j.at("classes")) {
        ClassSpec spec;
        if (c.is_string()) {
          spec.name = c.get<std::string>();
        } else {
          read(c, "name", spec.name);
          read(c, "scale_min", spec.scale_min);
          read(c, "scale_max", spec.scale_max);
          read(c, "base_size", spec.base_size);
        }
        s.classes.push_back(spec);
      }
    }
    read(j, "min_objects", s.min_objects);
    read(j, "max_objects", s.max_objects);
    read(j, "density", s.density);
    read(j, "floor_fraction", s.floor_fraction);
    read(j, "num_points", s.num_points);
    read(j, "noise_sigma", s.noise_sigma);
    read(j, "box_margin", s.box_margin);
    read(j, "partial_fraction", s.partial_fraction);
    read(j, "max_overlap", s.max_overlap);
    read(j, "chair_near_table", s.chair_near_table);
    read(j, "max_retries", s.max_retries);
    read(j, "seed", s.seed);
  }
  if (doc.contains("model")) {
    const auto& j = doc.at("model");
    auto& m = cfg.model;
    if (j.contains("backbone")) {
      const auto& b = j.at("backbone");
      read(b, "num_points", m.backbone.num_points);
      if (b.contains("sa")) {
        m.backbone.sa.clear();
        for (const auto& l : b.at("sa")) m.backbone.sa.push_back(sa_from_json(l));
      }
      read(b, "fp", m.backbone.fp);
    }
    read(j, "seed_hidden", m.seed_hidden);
    read(j, "num_heading_bins", m.num_heading_bins);
    read(j, "num_size_templates", m.num_size_templates);
    read(j, "num_classes", m.num_classes);
    if (j.contains("size_templates")) {
      read(j, "size_templates", m.size_templates);
    } else if (doc.contains("scene") && doc.at("scene").contains("classes")) {
      m.size_templates = class_templates(cfg.scene);
    }
    read(j, "num_proposals", m.num_proposals);
    read(j, "cluster_radius", m.cluster_radius);
    read(j, "cluster_group", m.cluster_group);
    read(j, "cluster_mlp", m.cluster_mlp);
    read(j, "head_hidden", m.head_hidden);
    read(j, "num_interior", m.num_interior);
    read(j, "d2", m.d2);
    read(j, "d_s", m.d_s);
    read(j, "d_l", m.d_l);
    read(j, "d_a", m.d_a);
    read(j, "d_p", m.d_p);
    read(j, "num_graphs", m.num_graphs);
    if (j.contains("position_mode")) m.position_mode = mode_from(j.at("position_mode").get<std::string>());
    read(j, "delta", m.delta);
    read(j, "eq5_literal", m.eq5_literal);
  }
  if (doc.contains("train")) {
    const auto& j = doc.at("train");
    auto& t = cfg.train;
    read(j, "epochs", t.epochs);
    read(j, "batch_size", t.batch_size);
    read(j, "learning_rate", t.adam.learning_rate);
    read(j, "beta1", t.adam.beta1);
    read(j, "beta2", t.adam.beta2);
    read(j, "eps", t.adam.eps);
    read(j, "schedule", t.adam.schedule);
    read(j, "lambda1", t.weights.obj);
    read(j, "lambda2", t.weights.box);
    read(j, "lambda3", t.weights.sem);
    read(j, "lambda4", t.weights.sup);
    read(j, "supervised_graph", t.supervised_graph);
    read(j, "near_thresh", t.near_thresh);
    read(j, "far_thresh", t.far_thresh);
    read(j, "direction_sign", t.direction_sign);
    read(j, "use_direction", t.use_direction);
    read(j, "augment", t.augment);
    read(j, "resample_plans", t.resample_plans);
    read(j, "checkpoint_every", t.checkpoint_every);
    read(j, "checked", t.checked);
    read(j, "seed", t.seed);
  }
  if (doc.contains("detect")) {
    const auto& j = doc.at("detect");
    read(j, "nms_thresh", cfg.detect.nms_thresh);
    read(j, "score_thresh", cfg.detect.score_thresh);
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path_or_preset) {
  for (const auto& name : preset_names()) {
    if (name == path_or_preset) return preset(name);
  }
  std::ifstream in(path_or_preset);
  if (!in) throw std::runtime_error("cannot open config \"" + path_or_preset + "\" (and it is not a preset name)");
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw std::runtime_error("config \"" + path_or_preset + "\": " + e.what());
  }
  return run_config_from_json(doc);
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const RunConfig& cfg) { return fnv1a_hex(to_json(cfg).dump()); }

}  // namespace relgraph
