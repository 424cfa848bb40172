#include "relgraph/scene.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace relgraph {

using nlohmann::json;

namespace {

constexpr double kPi = std::numbers::pi;

struct Bounds {
  Vec3 lo, hi;
};

Bounds part_bounds(const std::vector<ShapePart>& parts) {
  Bounds b{{1e300, 1e300, 1e300}, {-1e300, -1e300, -1e300}};
  for (const auto& p : parts) {
    for (int d = 0; d < 3; ++d) {
      b.lo[d] = std::min(b.lo[d], p.center[d] - 0.5 * p.size[d]);
      b.hi[d] = std::max(b.hi[d], p.center[d] + 0.5 * p.size[d]);
    }
  }
  return b;
}

Vec3 rotate_z(const Vec3& p, double a) {
  const double c = std::cos(a), s = std::sin(a);
  return {c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]};
}

double truncated_noise(Rng& rng, double sigma, double limit) {
  if (sigma <= 0.0 || limit <= 0.0) return 0.0;
  return std::clamp(sigma * normal(rng), -limit, limit);
}

// A placed object: its parts in the object frame, heading and floor position.
struct Placement {
  std::size_t cls = 0;
  std::vector<ShapePart> parts;
  double heading = 0.0;
  Vec3 origin{};  // object-frame origin in the room
  OrientedBox box;
};

OrientedBox placement_box(const std::vector<ShapePart>& parts, double heading, const Vec3& origin, double margin,
                          int cls) {
  const Bounds b = part_bounds(parts);
  OrientedBox box;
  const Vec3 local{0.5 * (b.lo[0] + b.hi[0]), 0.5 * (b.lo[1] + b.hi[1]), 0.5 * (b.lo[2] + b.hi[2])};
  const Vec3 r = rotate_z(local, heading);
  for (int d = 0; d < 3; ++d) {
    box.center[d] = origin[d] + r[d];
    box.size[d] = b.hi[d] - b.lo[d] + 2.0 * margin;
  }
  box.heading = wrap_angle(heading);
  box.class_id = cls;
  box.score = 1.0;
  return box;
}

// Points on the six faces of one cuboid part, area-weighted.
void sample_part(const ShapePart& part, double density, Rng& rng, std::vector<Vec3>& out) {
  const Vec3& s = part.size;
  const double areas[3] = {s[1] * s[2], s[0] * s[2], s[0] * s[1]};  // faces normal to x, y, z
  for (int axis = 0; axis < 3; ++axis) {
    for (int side = 0; side < 2; ++side) {
      const double expected = density * areas[axis];
      auto n = static_cast<std::size_t>(std::floor(expected));
      if (uniform01(rng) < expected - static_cast<double>(n)) ++n;
      for (std::size_t i = 0; i < n; ++i) {
        Vec3 p;
        for (int d = 0; d < 3; ++d) {
          p[d] = d == axis ? part.center[d] + (side ? 0.5 : -0.5) * s[d]
                           : part.center[d] + (uniform01(rng) - 0.5) * s[d];
        }
        out.push_back(p);
      }
    }
  }
}

void check_finite(const std::vector<Vec3>& pts, const char* what) {
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (double v : pts[i]) {
      if (!std::isfinite(v)) {
        throw std::invalid_argument(std::string(what) + ": point " + std::to_string(i) + " has a non-finite coordinate");
      }
    }
  }
}

}  // namespace

std::vector<ShapePart> class_shape(const ClassSpec& spec) {
  const std::string& n = spec.name;
  if (n == "chair") {
    std::vector<ShapePart> p = {{{0.0, 0.0, 0.42}, {0.48, 0.48, 0.06}}, {{0.0, 0.21, 0.67}, {0.48, 0.06, 0.44}}};
    for (double x : {-0.2, 0.2}) {
      for (double y : {-0.2, 0.2}) p.push_back({{x, y, 0.195}, {0.05, 0.05, 0.39}});
    }
    return p;
  }
  if (n == "table") {
    std::vector<ShapePart> p = {{{0.0, 0.0, 0.715}, {1.2, 0.75, 0.05}}};
    for (double x : {-0.54, 0.54}) {
      for (double y : {-0.31, 0.31}) p.push_back({{x, y, 0.345}, {0.06, 0.06, 0.69}});
    }
    return p;
  }
  if (n == "sofa") {
    return {{{0.0, 0.0, 0.21}, {1.8, 0.85, 0.42}},
            {{0.0, 0.34, 0.6}, {1.8, 0.17, 0.36}},
            {{-0.83, 0.0, 0.53}, {0.14, 0.85, 0.22}},
            {{0.83, 0.0, 0.53}, {0.14, 0.85, 0.22}}};
  }
  if (n == "cabinet" && !(spec.base_size[0] > 0.0)) return {{{0.0, 0.0, 0.5}, {0.8, 0.45, 1.0}}};
  const Vec3& s = spec.base_size;
  if (!(s[0] > 0.0 && s[1] > 0.0 && s[2] > 0.0)) {
    throw std::invalid_argument("class \"" + n + "\" has no built-in shape and no positive base_size");
  }
  return {{{0.0, 0.0, 0.5 * s[2]}, s}};
}

std::vector<Vec3> class_templates(const SceneConfig& scene) {
  std::vector<Vec3> out;
  for (const auto& c : scene.classes) {
    const Bounds b = part_bounds(class_shape(c));
    const double mean_scale = 0.5 * (c.scale_min + c.scale_max);
    out.push_back({(b.hi[0] - b.lo[0]) * mean_scale + 2.0 * scene.box_margin,
                   (b.hi[1] - b.lo[1]) * mean_scale + 2.0 * scene.box_margin,
                   (b.hi[2] - b.lo[2]) * mean_scale + 2.0 * scene.box_margin});
  }
  return out;
}

bool inside_room(const OrientedBox& box, const Vec3& room, double tol) {
  for (const auto& c : footprint(box)) {
    if (std::abs(c[0]) > 0.5 * room[0] + tol || std::abs(c[1]) > 0.5 * room[1] + tol) return false;
  }
  return box.center[2] - 0.5 * box.size[2] >= -tol && box.center[2] + 0.5 * box.size[2] <= room[2] + tol;
}

Scene synth_scene(const SceneConfig& cfg, std::uint64_t seed) {
  if (cfg.classes.empty()) throw std::invalid_argument("synth_scene: empty class catalog");
  if (cfg.min_objects < 1 || cfg.max_objects < cfg.min_objects) {
    throw std::invalid_argument("synth_scene: object count range must satisfy 1 <= min <= max");
  }
  if (!(cfg.density > 0.0) || cfg.num_points == 0) throw std::invalid_argument("synth_scene: density and num_points must be positive");
  Rng rng(derive_seed(seed, 0x5ce4e));
  const int count = cfg.min_objects +
                    static_cast<int>(uniform_index(rng, static_cast<std::size_t>(cfg.max_objects - cfg.min_objects + 1)));
  std::vector<std::size_t> classes(static_cast<std::size_t>(count));
  for (auto& c : classes) c = uniform_index(rng, cfg.classes.size());
  // Tables first so chairs can be arranged around them.
  std::stable_sort(classes.begin(), classes.end(), [&](std::size_t a, std::size_t b) {
    return (cfg.classes[a].name == "table") > (cfg.classes[b].name == "table");
  });

  std::vector<Placement> placed;
  for (std::size_t cls : classes) {
    const ClassSpec& spec = cfg.classes[cls];
    bool ok = false;
    for (int attempt = 0; attempt < cfg.max_retries && !ok; ++attempt) {
      Placement p;
      p.cls = cls;
      p.parts = class_shape(spec);
      Vec3 scale;
      for (auto& s : scale) s = uniform(rng, spec.scale_min, spec.scale_max);
      for (auto& part : p.parts) {
        for (int d = 0; d < 3; ++d) {
          part.center[d] *= scale[d];
          part.size[d] *= scale[d];
        }
      }
      std::vector<const Placement*> tables;
      for (const auto& q : placed) {
        if (cfg.classes[q.cls].name == "table") tables.push_back(&q);
      }
      if (spec.name == "chair" && !tables.empty() && uniform01(rng) < cfg.chair_near_table) {
        const Placement& t = *tables[uniform_index(rng, tables.size())];
        const int side = static_cast<int>(uniform_index(rng, 4));
        const double gap = 0.35 + uniform(rng, 0.0, 0.15);
        const double hx = 0.5 * t.box.size[0], hy = 0.5 * t.box.size[1];
        Vec3 off{0.0, 0.0, 0.0};
        if (side % 2 == 0) {
          off = {(side == 0 ? 1.0 : -1.0) * (hx + gap), uniform(rng, -0.3, 0.3) * hy, 0.0};
        } else {
          off = {uniform(rng, -0.3, 0.3) * hx, (side == 1 ? 1.0 : -1.0) * (hy + gap), 0.0};
        }
        const Vec3 w = rotate_z(off, t.box.heading);
        p.origin = {t.box.center[0] + w[0], t.box.center[1] + w[1], cfg.box_margin};
        // The chair's back sits on its +y side, so face -y towards the table.
        const double to_table = std::atan2(t.box.center[1] - p.origin[1], t.box.center[0] - p.origin[0]);
        p.heading = to_table + 0.5 * kPi;
      } else {
        p.origin = {uniform(rng, -0.5, 0.5) * cfg.room[0], uniform(rng, -0.5, 0.5) * cfg.room[1], cfg.box_margin};
        p.heading = uniform(rng, 0.0, 2.0 * kPi);
      }
      p.box = placement_box(p.parts, p.heading, p.origin, cfg.box_margin, static_cast<int>(cls));
      if (!inside_room(p.box, cfg.room)) continue;
      bool clear = true;
      for (const auto& q : placed) {
        const double iou = geom::iou_3d(p.box, q.box);
        if (cfg.max_overlap <= 0.0 ? geom::intersection_volume(p.box, q.box) > 0.0 : iou > cfg.max_overlap) {
          clear = false;
          break;
        }
      }
      if (!clear) continue;
      placed.push_back(std::move(p));
      ok = true;
    }
    if (!ok) {
      throw std::runtime_error("synth_scene: could not place a \"" + spec.name + "\" after " +
                               std::to_string(cfg.max_retries) + " attempts (seed " + std::to_string(seed) + ")");
    }
  }

  Scene scene;
  scene.seed = seed;
  std::vector<Vec3> obj_pts;
  std::vector<int> obj_lab;
  const double noise_limit = 0.5 * cfg.box_margin;
  Rng view_rng(derive_seed(seed, 0x7e1f));
  const double view = uniform(view_rng, 0.0, 2.0 * kPi);
  const Vec3 view_dir{std::cos(view), std::sin(view), 0.0};
  for (std::size_t k = 0; k < placed.size(); ++k) {
    const auto& p = placed[k];
    std::vector<Vec3> local;
    for (const auto& part : p.parts) sample_part(part, cfg.density, rng, local);
    std::vector<Vec3> world;
    world.reserve(local.size());
    for (const auto& l : local) {
      Vec3 w = rotate_z(l, p.heading);
      for (int d = 0; d < 3; ++d) w[d] += p.origin[d] + truncated_noise(rng, cfg.noise_sigma, noise_limit);
      world.push_back(w);
    }
    if (cfg.partial_fraction > 0.0 && !world.empty()) {
      std::vector<double> proj(world.size());
      for (std::size_t i = 0; i < world.size(); ++i) {
        proj[i] = (world[i][0] - p.box.center[0]) * view_dir[0] + (world[i][1] - p.box.center[1]) * view_dir[1];
      }
      std::vector<double> sorted = proj;
      const auto keep = static_cast<std::size_t>(std::ceil((1.0 - cfg.partial_fraction) * static_cast<double>(sorted.size())));
      std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(keep - 1), sorted.end());
      const double cut = sorted[keep - 1];
      std::vector<Vec3> kept;
      for (std::size_t i = 0; i < world.size(); ++i) {
        if (proj[i] <= cut) kept.push_back(world[i]);
      }
      world = std::move(kept);
    }
    for (const auto& w : world) {
      obj_pts.push_back(w);
      obj_lab.push_back(static_cast<int>(k));
    }
  }

  const auto n_floor = static_cast<std::size_t>(std::llround(cfg.floor_fraction * static_cast<double>(cfg.num_points)));
  const std::size_t n_obj = cfg.num_points - n_floor;
  if (obj_pts.empty()) throw std::runtime_error("synth_scene: objects produced no surface points");
  // Draw without replacement while possible, then repeat.
  std::vector<std::size_t> order(obj_pts.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = 0; i + 1 < order.size(); ++i) std::swap(order[i], order[i + uniform_index(rng, order.size() - i)]);
  for (std::size_t i = 0; i < n_obj; ++i) {
    const std::size_t j = order[i % order.size()];
    scene.cloud.coords.push_back(obj_pts[j]);
    scene.labels.push_back(obj_lab[j]);
  }
  std::size_t floor_added = 0;
  for (std::size_t tries = 0; floor_added < n_floor; ++tries) {
    if (tries > 1000 * (n_floor + 1)) throw std::runtime_error("synth_scene: no free floor area");
    const Vec3 f{uniform(rng, -0.5, 0.5) * cfg.room[0], uniform(rng, -0.5, 0.5) * cfg.room[1],
                 truncated_noise(rng, cfg.noise_sigma, noise_limit)};
    bool under = false;
    for (const auto& p : placed) {
      if (contains(p.box, f, cfg.box_margin)) {
        under = true;
        break;
      }
    }
    if (under) continue;
    scene.cloud.coords.push_back(f);
    scene.labels.push_back(-1);
    ++floor_added;
  }
  for (const auto& p : placed) scene.boxes.push_back(p.box);
  return scene;
}

Augmentation draw_augmentation(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0xa06));
  Augmentation a;
  a.flip_x = uniform01(rng) < 0.5;
  a.flip_y = uniform01(rng) < 0.5;
  a.rotation = uniform(rng, -kPi / 6.0, kPi / 6.0);
  a.scale = uniform(rng, 0.9, 1.1);
  return a;
}

Scene apply_augmentation(const Scene& scene, const Augmentation& aug) {
  Scene out = scene;
  const auto transform = [&](Vec3 p) {
    if (aug.flip_x) p[0] = -p[0];
    if (aug.flip_y) p[1] = -p[1];
    p = rotate_z(p, aug.rotation);
    for (double& v : p) v *= aug.scale;
    return p;
  };
  for (auto& p : out.cloud.coords) p = transform(p);
  for (auto& b : out.boxes) {
    b.center = transform(b.center);
    for (double& s : b.size) s *= aug.scale;
    double h = b.heading;
    if (aug.flip_x) h = kPi - h;
    if (aug.flip_y) h = -h;
    b.heading = wrap_angle(h + aug.rotation);
  }
  return out;
}

Scene augment(const Scene& scene, std::uint64_t seed) { return apply_augmentation(scene, draw_augmentation(seed)); }

loss::SeedCandidates seed_candidates(std::span<const Vec3> points, std::span<const OrientedBox> boxes) {
  loss::SeedCandidates out(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (const auto& b : boxes) {
      if (out[i].size() == 3) break;
      if (contains(b, points[i])) out[i].push_back(b.center);
    }
  }
  return out;
}

// ---- files --------------------------------------------------------------------

json scene_to_json(const Scene& scene) {
  json boxes = json::array();
  for (const auto& b : scene.boxes) {
    boxes.push_back({{"center", b.center}, {"size", b.size}, {"heading", b.heading}, {"class_id", b.class_id}});
  }
  return {{"seed", scene.seed}, {"points", scene.cloud.coords}, {"labels", scene.labels}, {"boxes", boxes}};
}

Scene scene_from_json(const json& doc) {
  Scene s;
  try {
    s.seed = doc.value("seed", std::uint64_t{0});
    s.cloud.coords = doc.at("points").get<std::vector<Vec3>>();
    if (doc.contains("labels")) s.labels = doc.at("labels").get<std::vector<int>>();
    if (doc.contains("boxes")) {
      for (const auto& j : doc.at("boxes")) {
        OrientedBox b;
        b.center = j.at("center").get<Vec3>();
        b.size = j.at("size").get<Vec3>();
        b.heading = j.value("heading", 0.0);
        b.class_id = j.value("class_id", 0);
        b.score = j.value("score", 1.0);
        s.boxes.push_back(b);
      }
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("scene JSON: ") + e.what());
  }
  check_finite(s.cloud.coords, "scene JSON");
  if (!s.labels.empty() && s.labels.size() != s.cloud.coords.size()) {
    throw std::invalid_argument("scene JSON: labels and points differ in length");
  }
  return s;
}

void write_ply(const std::filesystem::path& path, const Scene& scene, bool binary) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "ply\nformat " << (binary ? "binary_little_endian" : "ascii") << " 1.0\n"
      << "element vertex " << scene.cloud.coords.size() << "\n"
      << "property double x\nproperty double y\nproperty double z\nproperty int label\nend_header\n";
  for (std::size_t i = 0; i < scene.cloud.coords.size(); ++i) {
    const auto& p = scene.cloud.coords[i];
    const std::int32_t label = scene.labels.empty() ? -1 : scene.labels[i];
    if (binary) {
      static_assert(std::endian::native == std::endian::little, "binary PLY output assumes a little-endian host");
      out.write(reinterpret_cast<const char*>(p.data()), 3 * sizeof(double));
      out.write(reinterpret_cast<const char*>(&label), sizeof label);
    } else {
      char buf[96];
      std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %d\n", p[0], p[1], p[2], label);
      out << buf;
    }
  }
}

Scene read_ply(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "ply") throw std::invalid_argument(path.string() + ": not a PLY file");
  bool binary = false;
  std::size_t count = 0;
  struct Prop {
    std::string type, name;
  };
  std::vector<Prop> props;
  bool in_vertex = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "binary_little_endian") {
        binary = true;
      } else if (fmt != "ascii") {
        throw std::invalid_argument(path.string() + ": unsupported PLY format " + fmt);
      }
    } else if (key == "element") {
      std::string name;
      ls >> name;
      in_vertex = name == "vertex";
      if (in_vertex) ls >> count;
    } else if (key == "property" && in_vertex) {
      Prop p;
      ls >> p.type >> p.name;
      if (p.type == "list") throw std::invalid_argument(path.string() + ": list properties on vertices are unsupported");
      props.push_back(p);
    } else if (key == "end_header") {
      break;
    }
  }
  const auto size_of = [&](const std::string& t) -> std::size_t {
    if (t == "double" || t == "float64") return 8;
    if (t == "float" || t == "float32" || t == "int" || t == "int32" || t == "uint" || t == "uint32") return 4;
    if (t == "short" || t == "int16" || t == "ushort" || t == "uint16") return 2;
    if (t == "char" || t == "int8" || t == "uchar" || t == "uint8") return 1;
    throw std::invalid_argument(path.string() + ": unsupported PLY property type " + t);
  };
  int ix = -1, iy = -1, iz = -1, il = -1;
  for (std::size_t i = 0; i < props.size(); ++i) {
    const auto& n = props[i].name;
    if (n == "x") ix = static_cast<int>(i);
    if (n == "y") iy = static_cast<int>(i);
    if (n == "z") iz = static_cast<int>(i);
    if (n == "label") il = static_cast<int>(i);
  }
  if (ix < 0 || iy < 0 || iz < 0) throw std::invalid_argument(path.string() + ": vertices need x, y and z");
  Scene s;
  s.cloud.coords.resize(count);
  if (il >= 0) s.labels.resize(count);
  std::vector<double> row(props.size());
  for (std::size_t v = 0; v < count; ++v) {
    for (std::size_t i = 0; i < props.size(); ++i) {
      const auto& t = props[i].type;
      if (!binary) {
        if (!(in >> row[i])) throw std::invalid_argument(path.string() + ": truncated vertex data");
        continue;
      }
      unsigned char buf[8];
      const std::size_t n = size_of(t);
      if (!in.read(reinterpret_cast<char*>(buf), static_cast<std::streamsize>(n))) {
        throw std::invalid_argument(path.string() + ": truncated vertex data");
      }
      if (t == "double" || t == "float64") {
        row[i] = std::bit_cast<double>(*reinterpret_cast<std::uint64_t*>(buf));
      } else if (t == "float" || t == "float32") {
        float f;
        std::memcpy(&f, buf, 4);
        row[i] = f;
      } else if (t == "int" || t == "int32") {
        std::int32_t x;
        std::memcpy(&x, buf, 4);
        row[i] = x;
      } else if (t == "uint" || t == "uint32") {
        std::uint32_t x;
        std::memcpy(&x, buf, 4);
        row[i] = x;
      } else if (t == "short" || t == "int16") {
        std::int16_t x;
        std::memcpy(&x, buf, 2);
        row[i] = x;
      } else if (t == "ushort" || t == "uint16") {
        std::uint16_t x;
        std::memcpy(&x, buf, 2);
        row[i] = x;
      } else if (t == "char" || t == "int8") {
        row[i] = static_cast<std::int8_t>(buf[0]);
      } else {
        row[i] = buf[0];
      }
    }
    s.cloud.coords[v] = {row[static_cast<std::size_t>(ix)], row[static_cast<std::size_t>(iy)],
                         row[static_cast<std::size_t>(iz)]};
    if (il >= 0) s.labels[v] = static_cast<int>(row[static_cast<std::size_t>(il)]);
  }
  check_finite(s.cloud.coords, path.string().c_str());
  return s;
}

void save_scene(const std::filesystem::path& path, const Scene& scene) {
  const auto ext = path.extension().string();
  if (ext == ".ply") {
    write_ply(path, scene, true);
    return;
  }
  if (ext != ".json") throw std::invalid_argument("scene file must end in .json or .ply: " + path.string());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << scene_to_json(scene).dump() << "\n";
}

Scene load_scene(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".ply") return read_ply(path);
  if (ext != ".json") throw std::invalid_argument("scene file must end in .json or .ply: " + path.string());
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
  return scene_from_json(doc);
}

}  // namespace relgraph
