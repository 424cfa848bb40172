#pragma once

// Run configuration: scene generator, model dimensions, training and
// detection settings, with named presets, JSON round-trip and a stable hash.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "relgraph/backbone.hpp"
#include "relgraph/geometry.hpp"
#include "relgraph/losses.hpp"
#include "relgraph/nn.hpp"
#include "relgraph/relation_graph.hpp"

namespace relgraph {

struct ClassSpec {
  std::string name;
  /// Per-axis multiplicative jitter applied to the class's base shape.
  double scale_min = 0.85;
  double scale_max = 1.15;
  /// Extents of a plain cuboid class; unused by the named composite shapes.
  Vec3 base_size{0.0, 0.0, 0.0};
};

struct SceneConfig {
  Vec3 room{5.0, 5.0, 3.0};
  std::vector<ClassSpec> classes;
  int min_objects = 3;
  int max_objects = 6;
  /// Surface samples per square meter before resampling to `num_points`.
  double density = 400.0;
  /// Fraction of the final cloud drawn from the floor.
  double floor_fraction = 0.15;
  std::size_t num_points = 2048;
  double noise_sigma = 0.005;
  /// Slack added to each side of the tight bounds of every object.
  double box_margin = 0.02;
  /// Fraction of each object's points removed on the side facing away from a
  /// random view direction.
  double partial_fraction = 0.0;
  /// Largest 3D IoU allowed between two placed objects.
  double max_overlap = 0.0;
  /// Probability that a chair is placed next to an existing table.
  double chair_near_table = 0.7;
  int max_retries = 1000;
  std::uint64_t seed = 1;
};

SceneConfig default_scene_config();

struct ModelConfig {
  backbone::BackboneConfig backbone;
  std::vector<std::size_t> seed_hidden;
  std::size_t num_heading_bins = 12;
  std::size_t num_size_templates = 4;
  std::size_t num_classes = 4;
  std::vector<Vec3> size_templates;
  std::size_t num_proposals = 32;  // K_c
  double cluster_radius = 0.3;
  std::size_t cluster_group = 16;
  std::vector<std::size_t> cluster_mlp;
  std::vector<std::size_t> head_hidden;
  std::size_t num_interior = 16;  // N_R
  std::size_t d2 = 64;
  std::size_t d_s = 16;
  std::size_t d_l = 8;
  std::size_t d_a = 64;
  std::size_t d_p = 64;
  std::size_t num_graphs = 3;
  relation::PositionMode position_mode = relation::PositionMode::mask;
  /// Mask distance; non-positive means a quarter of the room diagonal.
  double delta = 0.0;
  bool eq5_literal = true;

  std::size_t seed_dim() const { return backbone.seed_dim(); }
  std::size_t cluster_dim() const { return cluster_mlp.back(); }
};

struct TrainConfig {
  int epochs = 60;
  std::size_t batch_size = 2;
  nn::AdamConfig adam;
  loss::LossWeights weights;
  bool supervised_graph = false;
  double near_thresh = 0.3;
  double far_thresh = 0.6;
  double direction_sign = 1.0;
  bool use_direction = true;
  bool augment = false;
  /// Draw a fresh sampling plan (FPS, grouping) for every scene each epoch.
  bool resample_plans = true;
  int checkpoint_every = 0;  // epochs; 0 keeps only the final checkpoint
  bool checked = false;
  std::uint64_t seed = 7;
};

struct DetectConfig {
  double nms_thresh = 0.25;
  double score_thresh = 0.05;
};

struct RunConfig {
  std::string preset = "desk";
  SceneConfig scene;
  ModelConfig model;
  TrainConfig train;
  DetectConfig detect;

  double effective_delta() const;
};

/// Names accepted by `preset`.
std::vector<std::string> preset_names();
/// "desk", "base" (desk without relation graphs and with the base-model loss
/// weights), "paper-sun", "paper-scannet". Throws on an unknown name.
RunConfig preset(const std::string& name);

/// Throws std::invalid_argument on an inconsistent configuration.
void validate(const RunConfig& cfg);

nlohmann::json to_json(const RunConfig& cfg);
/// Starts from the named preset (key "preset", default "desk") and
/// overrides every field present in `doc`.
RunConfig run_config_from_json(const nlohmann::json& doc);
RunConfig load_run_config(const std::string& path_or_preset);

/// 16 hex digits of FNV-1a over the canonical JSON dump.
std::string config_hash(const RunConfig& cfg);
std::string fnv1a_hex(const std::string& text);

}  // namespace relgraph
