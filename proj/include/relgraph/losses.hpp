#pragma once

// Training objectives: direction loss on seeds, objectness and semantic
// cross entropies, the decomposed box loss and the weighted total.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "relgraph/geometry.hpp"
#include "relgraph/proposal.hpp"

namespace relgraph::loss {

using ad::Tensor;

struct LossWeights {
  double obj = 0.4;  // lambda1
  double box = 1.0;  // lambda2
  double sem = 0.2;  // lambda3
  double sup = 0.0;  // lambda4
};

/// Per-seed candidate centers (up to three); an empty list marks a non-surface
/// seed (B_i = 0).
using SeedCandidates = std::vector<std::vector<Vec3>>;

struct DirectionLossOptions {
  /// Sign applied to (g - g*) / |g - g*|.
  double sign = 1.0;
  /// False drops the -v.v* term, leaving the distance-only variant.
  bool use_direction = true;
};

/// mean over surface seeds of |g' - g*| - v . v*, where g* is the candidate
/// nearest to g'. Throws std::invalid_argument without surface seeds.
Tensor direction_loss(const Tensor& pseudo_centers, const Tensor& directions, std::span<const Vec3> seed_coords,
                      const SeedCandidates& candidates, const DirectionLossOptions& opt = {});

/// Mean two-class cross entropy over non-ignored proposals; class 1 is
/// positive. Throws std::invalid_argument when every proposal is ignored.
Tensor objectness_loss(const Tensor& logits, std::span<const proposal::Objectness> assignment);

/// Regression and classification targets for one proposal matched to a
/// ground-truth box.
struct BoxTarget {
  Vec3 center{};
  std::size_t heading_bin = 0;
  double heading_residual = 0.0;  // in half-bin units
  std::size_t size_template = 0;
  Vec3 size_residual{};  // log(size / template)
  std::size_t class_id = 0;
};

/// Size template used for `box`: its class when there is one template per
/// class, otherwise the nearest template in log-size.
std::size_t size_template_for(const OrientedBox& box, std::span<const Vec3> templates, std::size_t num_classes);

BoxTarget make_box_target(const OrientedBox& gt, const proposal::HeadLayout& layout,
                          std::span<const Vec3> templates);

struct BoxLoss {
  Tensor center_reg, heading_cls, heading_reg, size_cls, size_reg;
  Tensor total;  // c_reg + 0.1 h_cls + h_reg + 0.1 s_cls + s_reg
  std::size_t positives = 0;
};

/// Box loss over the rows of `raw` listed in `positive` (each with its
/// target). Smooth-L1 (beta 1) summed over coordinates, cross entropy for
/// bins and templates, averaged over positives. With no positive every term
/// is a zero constant. When `anchor_rows` (K x 3, equal to `anchors`) is
/// given the center term also differentiates through the anchors.
BoxLoss box_loss(const Tensor& raw, const proposal::HeadLayout& layout, std::span<const Vec3> anchors,
                 std::span<const std::size_t> positive, std::span<const BoxTarget> targets,
                 const Tensor& anchor_rows = Tensor());

/// Semantic cross entropy over positive rows; zero without positives.
Tensor semantic_loss(const Tensor& raw, const proposal::HeadLayout& layout, std::span<const std::size_t> positive,
                     std::span<const BoxTarget> targets);

struct LossComponents {
  Tensor dir, obj, sem, sup;
  BoxLoss box;
};

struct LossReport {
  double total = 0.0;
  double dir = 0.0, obj = 0.0, box = 0.0, sem = 0.0, sup = 0.0;
  double center_reg = 0.0, heading_cls = 0.0, heading_reg = 0.0, size_cls = 0.0, size_reg = 0.0;
  std::size_t positives = 0;
  Tensor total_tensor;

  static std::vector<std::string> field_names();
  std::vector<double> field_values() const;
};

/// L_dir + l1 L_obj + l2 L_box + l3 L_sem + l4 L_sup. An undefined `sup` is
/// read as 0. Throws ad::NonFiniteError naming the first non-finite component.
LossReport total_loss(const LossComponents& c, const LossWeights& w);

}  // namespace relgraph::loss
