#pragma once

// Seed head (pseudo centers, refined features, unit direction vectors),
// pseudo-center clustering and proposal decoding.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "relgraph/backbone.hpp"
#include "relgraph/geometry.hpp"
#include "relgraph/nn.hpp"

namespace relgraph::proposal {

using ad::Tensor;

/// Channel layout of one proposal head row:
///   [objectness 2 | center offset 3 | direction 3 | heading scores NH |
///    heading residuals NH | size scores NS | size residuals 3NS | semantic NC]
struct HeadLayout {
  std::size_t num_heading_bins = 12;
  std::size_t num_size_templates = 10;
  std::size_t num_classes = 10;

  HeadLayout() = default;
  HeadLayout(std::size_t nh, std::size_t ns, std::size_t nc);

  std::size_t width() const { return 2 + 6 + 2 * num_heading_bins + 4 * num_size_templates + num_classes; }
  std::size_t objectness() const { return 0; }
  std::size_t center() const { return 2; }
  std::size_t direction() const { return 5; }
  std::size_t heading_scores() const { return 8; }
  std::size_t heading_residuals() const { return 8 + num_heading_bins; }
  std::size_t size_scores() const { return 8 + 2 * num_heading_bins; }
  std::size_t size_residuals() const { return 8 + 2 * num_heading_bins + num_size_templates; }
  std::size_t semantic() const { return 8 + 2 * num_heading_bins + 4 * num_size_templates; }
};

double heading_bin_width(std::size_t num_bins);
/// Nearest bin center and the residual normalized by half a bin width.
struct HeadingBin {
  std::size_t bin;
  double residual;
};
HeadingBin heading_to_bin(double heading, std::size_t num_bins);
double bin_to_heading(std::size_t bin, double residual, std::size_t num_bins);

/// (g - g*) / |g - g*| times `sign`; throws std::domain_error when g == g*.
Vec3 gt_direction(const Vec3& g, const Vec3& g_star, double sign = 1.0);

struct SeedPredictions {
  Tensor pseudo_centers;  // M x 3
  Tensor features;        // M x d1
  Tensor directions;      // M x 3, unit rows
};

/// Shared MLP producing (offset 3 | feature residual d1 | direction 3) per seed.
class SeedHead {
 public:
  SeedHead() = default;
  SeedHead(nn::ParamStore& store, const std::string& name, std::size_t feature_dim,
           const std::vector<std::size_t>& hidden, Rng& rng);
  SeedPredictions operator()(const backbone::SeedSet& seeds) const;

 private:
  std::size_t dim_ = 0;
  nn::Mlp mlp_;
};

struct Cluster {
  std::size_t anchor_seed = 0;
  Vec3 anchor{};
  std::vector<std::size_t> members;
};

std::vector<Cluster> cluster_pseudo_centers(std::span<const Vec3> pseudo_centers, std::size_t num_clusters,
                                            double radius, std::size_t group, std::uint64_t seed);

std::vector<Vec3> rows_to_points(const Tensor& t);

/// Max-pools a shared MLP over each cluster's members, reading
/// (feature | direction | (pseudo center - anchor) / radius).
class ClusterAggregator {
 public:
  ClusterAggregator() = default;
  ClusterAggregator(nn::ParamStore& store, const std::string& name, std::size_t feature_dim,
                    const std::vector<std::size_t>& widths, double radius, Rng& rng);
  Tensor operator()(const SeedPredictions& preds, const std::vector<Cluster>& clusters) const;
  std::size_t out() const { return mlp_.out(); }

 private:
  double radius_ = 0.3;
  nn::Mlp mlp_;
};

struct Proposal {
  OrientedBox box;
  std::array<double, 2> objectness_logits{0.0, 0.0};
  std::vector<double> semantic_logits;
  std::vector<std::size_t> cluster_members;
  Vec3 anchor{};
  Vec3 direction_refinement{};
  std::vector<double> appearance;

  /// Softmax probability of the positive objectness class.
  double objectness() const;
};

/// Decodes one raw head row relative to its cluster anchor. The box score is
/// the objectness probability and the class is the semantic argmax.
Proposal decode_head(std::span<const double> raw, const HeadLayout& layout, const Vec3& anchor,
                     std::span<const Vec3> size_templates);

/// Differentiable view of the decoded geometry for a whole head output. The
/// selected bin/template follows the current argmax.
struct DecodedGeometry {
  Tensor centers;    // K x 3
  Tensor log_sizes;  // K x 3
  Tensor headings;   // K x 1 (not wrapped)
};
DecodedGeometry decode_geometry(const Tensor& raw, const HeadLayout& layout, std::span<const Vec3> anchors,
                                std::span<const Vec3> size_templates);
/// Same with anchors as a K x 3 tensor, so centers carry gradient into them.
DecodedGeometry decode_geometry(const Tensor& raw, const HeadLayout& layout, const Tensor& anchors,
                                std::span<const Vec3> size_templates);

enum class Objectness { positive, negative, ignore };

/// Positive within `near_thresh` of a ground-truth center, negative beyond
/// `far_thresh` of all of them, ignored in between.
std::vector<Objectness> assign_objectness(std::span<const Vec3> anchors, std::span<const OrientedBox> gt,
                                          double near_thresh, double far_thresh);

/// Index of the ground-truth box whose center is nearest to `p`.
std::size_t nearest_gt(const Vec3& p, std::span<const OrientedBox> gt);

}  // namespace relgraph::proposal
