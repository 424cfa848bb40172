#pragma once

// PointNet++-style feature extractor at desk scale: farthest point sampling,
// ball-query grouping, Set Abstraction and Feature Propagation layers.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "relgraph/geometry.hpp"
#include "relgraph/nn.hpp"

namespace relgraph::backbone {

using ad::Tensor;

struct PointCloud {
  std::vector<Vec3> coords;
};

/// Throws std::invalid_argument when the cloud is empty or has a non-finite
/// coordinate.
void validate(const PointCloud& cloud);

/// FPS starting from `first`. Exact distance ties go to the lowest index.
std::vector<std::size_t> farthest_point_sample_from(std::span<const Vec3> points, std::size_t k, std::size_t first);
/// FPS whose first index is drawn from `seed`.
std::vector<std::size_t> farthest_point_sample(std::span<const Vec3> points, std::size_t k, std::uint64_t seed);

/// Indices within `radius` of `center` in scan order, at most `max_count`,
/// repeat-filled with the first hit. With no hit the nearest point is
/// repeated.
std::vector<std::size_t> ball_query(std::span<const Vec3> points, const Vec3& center, double radius,
                                    std::size_t max_count);

/// Three-nearest-neighbor inverse-distance weights with `eps` added to each
/// distance. Fewer than three coarse points use all of them.
struct Interpolation {
  std::vector<std::size_t> index;
  std::vector<double> weight;
  std::size_t k = 3;
};
Interpolation three_nn_weights(std::span<const Vec3> coarse, std::span<const Vec3> fine, double eps = 1e-8);

struct SaSpec {
  std::size_t centers = 0;
  double radius = 0.2;
  std::size_t group = 16;
  std::vector<std::size_t> mlp;
};

struct BackboneConfig {
  std::size_t num_points = 2048;
  std::vector<SaSpec> sa;
  std::vector<std::vector<std::size_t>> fp;

  std::size_t seed_level() const { return sa.size() - fp.size(); }
  std::size_t seed_count() const { return sa[seed_level() - 1].centers; }
  std::size_t seed_dim() const { return fp.back().back(); }
};

/// Precomputed sampling/grouping for one cloud; depends on coordinates and
/// the seed only, so it can be cached across training steps.
struct BackbonePlan {
  struct Level {
    std::vector<std::size_t> center_index;  // into the previous level
    std::vector<Vec3> coords;
    std::vector<std::size_t> group_index;  // centers x group, into the previous level
    std::vector<double> canonical;         // centers x group x 3, (p - c) / radius
  };
  std::vector<Vec3> input;
  std::vector<Level> levels;
  std::vector<Interpolation> fp_interp;  // FP i maps level (L-i) onto level (L-i-1)
};

BackbonePlan plan_backbone(const PointCloud& cloud, const BackboneConfig& cfg, std::uint64_t seed);

/// One SA step given grouping: canonical offsets concatenated with member
/// features, shared MLP, max-pool per group.
class SetAbstraction {
 public:
  SetAbstraction() = default;
  SetAbstraction(nn::ParamStore& store, const std::string& name, std::size_t in_features, const SaSpec& spec,
                 Rng& rng);
  /// `features` may be undefined (xyz-only input).
  Tensor operator()(const BackbonePlan::Level& level, const Tensor& features) const;
  std::size_t out() const { return mlp_.out(); }

 private:
  SaSpec spec_;
  nn::Mlp mlp_;
};

class FeaturePropagation {
 public:
  FeaturePropagation() = default;
  FeaturePropagation(nn::ParamStore& store, const std::string& name, std::size_t coarse_dim, std::size_t skip_dim,
                     const std::vector<std::size_t>& widths, Rng& rng);
  Tensor operator()(const Interpolation& interp, const Tensor& coarse, const Tensor& skip) const;
  std::size_t out() const { return mlp_.out(); }

 private:
  nn::Mlp mlp_;
};

struct SeedSet {
  std::vector<Vec3> coords;  // M
  Tensor features;           // M x d1
};

class Backbone {
 public:
  Backbone() = default;
  Backbone(nn::ParamStore& store, const std::string& name, const BackboneConfig& cfg, Rng& rng);
  SeedSet operator()(const BackbonePlan& plan) const;
  const BackboneConfig& config() const { return cfg_; }

 private:
  BackboneConfig cfg_;
  std::vector<SetAbstraction> sa_;
  std::vector<FeaturePropagation> fp_;
};

}  // namespace relgraph::backbone
