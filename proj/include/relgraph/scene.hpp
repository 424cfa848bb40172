#pragma once

// Procedural indoor scenes built from cuboid furniture, the augmentation
// protocol, and scene files (JSON or PLY).

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "relgraph/backbone.hpp"
#include "relgraph/config.hpp"
#include "relgraph/losses.hpp"

namespace relgraph {

struct Scene {
  backbone::PointCloud cloud;
  std::vector<OrientedBox> boxes;
  /// Object index per point, -1 for background.
  std::vector<int> labels;
  std::uint64_t seed = 0;
};

/// One cuboid of a furniture shape in the object frame (z up from the floor).
struct ShapePart {
  Vec3 center;
  Vec3 size;
};

/// Parts of the class's base shape: chair, table, sofa and cabinet are
/// composites; any other name is a single cuboid of `ClassSpec::base_size`.
std::vector<ShapePart> class_shape(const ClassSpec& spec);

/// Base-shape extents plus twice the box margin, one per class.
std::vector<Vec3> class_templates(const SceneConfig& scene);

/// The room spans [-x/2, x/2] x [-y/2, y/2] x [0, z].
bool inside_room(const OrientedBox& box, const Vec3& room, double tol = 1e-9);

/// Throws std::runtime_error when objects cannot be placed within
/// `max_retries` attempts.
Scene synth_scene(const SceneConfig& cfg, std::uint64_t seed);

struct Augmentation {
  bool flip_x = false;  // x -> -x
  bool flip_y = false;  // y -> -y
  double rotation = 0.0;  // radians about +z, applied after the flips
  double scale = 1.0;
};

/// Flips with probability 1/2 each, rotation in [-30, 30] degrees, scale in
/// [0.9, 1.1].
Augmentation draw_augmentation(std::uint64_t seed);
Scene apply_augmentation(const Scene& scene, const Augmentation& aug);
Scene augment(const Scene& scene, std::uint64_t seed);

/// Centers of up to three ground-truth boxes that contain each point, in
/// box order; empty for background points.
loss::SeedCandidates seed_candidates(std::span<const Vec3> points, std::span<const OrientedBox> boxes);

nlohmann::json scene_to_json(const Scene& scene);
Scene scene_from_json(const nlohmann::json& doc);

/// PLY with x, y, z (double) and an int `label` property.
void write_ply(const std::filesystem::path& path, const Scene& scene, bool binary = true);
/// Reads ascii or binary little-endian PLY vertices (float or double x, y, z
/// and an optional integer label). Boxes are not stored in PLY.
Scene read_ply(const std::filesystem::path& path);

/// Dispatches on the extension (.json or .ply). Non-finite coordinates are
/// rejected.
void save_scene(const std::filesystem::path& path, const Scene& scene);
Scene load_scene(const std::filesystem::path& path);

}  // namespace relgraph
