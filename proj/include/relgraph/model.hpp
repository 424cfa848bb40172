#pragma once

// End-to-end detector: backbone, seed head, pseudo-center clustering,
// stage-1 proposal head, attention pooling, relation graphs and the refine
// head, plus its training losses and post-processing.

#include <cstdint>
#include <memory>
#include <vector>

#include "relgraph/attention_pool.hpp"
#include "relgraph/backbone.hpp"
#include "relgraph/config.hpp"
#include "relgraph/losses.hpp"
#include "relgraph/proposal.hpp"
#include "relgraph/relation_graph.hpp"
#include "relgraph/scene.hpp"

namespace relgraph {

using ad::Tensor;

struct ForwardPass {
  std::vector<Vec3> seed_coords;
  proposal::SeedPredictions seeds;
  std::vector<proposal::Cluster> clusters;
  std::vector<Vec3> anchors;
  Tensor anchor_rows;  // K_c x 3, the anchors as rows of the pseudo centers
  Tensor cluster_features;
  Tensor stage1;  // K_c x head width
  // Present when the relation stage runs.
  std::vector<pool::InteriorSample> samples;
  Tensor appearance;  // R, K_c x d2
  relation::RelationOutput relation;
  Tensor refined;  // K_c x head width

  /// The head whose boxes are reported.
  const Tensor& final_head() const { return refined.defined() ? refined : stage1; }
};

class Detector {
 public:
  /// Builds every parameter from `init_seed`.
  Detector(const RunConfig& cfg, std::uint64_t init_seed);
  Detector(const Detector&) = delete;
  Detector& operator=(const Detector&) = delete;

  const RunConfig& config() const { return cfg_; }
  nn::ParamStore& store() { return store_; }
  const nn::ParamStore& store() const { return store_; }
  const proposal::HeadLayout& layout() const { return layout_; }

  backbone::BackbonePlan plan(const Scene& scene, std::uint64_t seed) const;
  ForwardPass forward(const backbone::BackbonePlan& plan, std::uint64_t seed) const;
  /// Direction, objectness, box, semantic and (optionally) graph losses. The
  /// proposal losses average the stage-1 and refined heads.
  loss::LossReport loss(const ForwardPass& f, const Scene& scene) const;

  /// Proposals of the reported head with objectness >= `score_thresh`,
  /// after class-wise NMS at `nms_thresh`, in selection order.
  std::vector<proposal::Proposal> detect(const ForwardPass& f, double score_thresh, double nms_thresh) const;
  std::vector<OrientedBox> detect_boxes(const ForwardPass& f, double score_thresh, double nms_thresh) const;

  std::size_t pooling_parameters() const { return store_.count("pool."); }
  std::size_t relation_parameters() const { return store_.count("relation."); }

 private:
  RunConfig cfg_;
  proposal::HeadLayout layout_;
  nn::ParamStore store_;
  backbone::Backbone backbone_;
  proposal::SeedHead seed_head_;
  proposal::ClusterAggregator aggregator_;
  nn::Mlp head1_;
  pool::PointAttentionPool pool_;
  relation::RelationModule relation_;
  nn::Mlp head2_;
};

/// Heads' proposal losses for one scene (exposed for gradient checks).
struct HeadLossTerms {
  Tensor obj, sem;
  loss::BoxLoss box;
};
HeadLossTerms head_losses(const Tensor& raw, const proposal::HeadLayout& layout, std::span<const Vec3> anchors,
                          const Tensor& anchor_rows, std::span<const Vec3> templates, std::span<const OrientedBox> gt,
                          double near_thresh, double far_thresh);

}  // namespace relgraph
