#pragma once

// Object-object relation graphs over proposals: appearance and position
// affinities, row-normalized graph weights, relation features, multi-graph
// fusion and the optional center-of-mass supervision.

#include <span>
#include <string>
#include <vector>

#include "relgraph/geometry.hpp"
#include "relgraph/nn.hpp"

namespace relgraph::relation {

using ad::Tensor;

enum class PositionMode { mask, encoding };

struct RelationDims {
  std::size_t appearance = 64;  // d2
  std::size_t key = 64;         // d_a
  std::size_t embed = 64;       // d_p
  std::size_t hidden = 32;      // K_c, width of the position network's hidden layer
};

struct RelationOptions {
  PositionMode mode = PositionMode::mask;
  double delta = 1.6;
  /// Softmax applied on top of the inner normalization.
  bool literal = true;
};

/// K_c * d_p + d_a * (2 * d2 + K_c) + d2^2.
std::size_t relation_param_count(std::size_t k_c, std::size_t d_p, std::size_t d_a, std::size_t d2);

/// A quarter of the room diagonal.
double delta_from_extent(const Vec3& extent);

/// Position features U = (L, S) of K proposals.
struct PositionFeatures {
  Tensor centers;    // K x 3
  Tensor log_sizes;  // K x 3
  Tensor headings;   // K x 1
};

/// Pair descriptor rows ordered (m, n), K*K x 10:
///   L_n - L_m (3) | log S_n - log S_m (3) | h_n - h_m | |L_n - L_m| | log vol_m | log vol_n
Tensor pair_descriptor(const PositionFeatures& u);

/// Matrix of pairwise center distances from the current values (no gradient).
std::vector<double> center_distances(const Tensor& centers);

struct RelationGraph {
  Tensor appearance;  // alpha^A
  Tensor position;    // alpha^P, non-negative
  Tensor inner;       // row-normalized alpha^P * exp(alpha^A)
  Tensor weights;     // alpha, row-stochastic
};

/// alpha^A_mn = (W_a1 R_m) . (W_a2 R_n) / sqrt(d_a), as a K x K matrix of
/// already projected keys and queries.
Tensor appearance_affinity(const Tensor& projected_m, const Tensor& projected_n, std::size_t d_a);

/// Inner weights alpha^P exp(alpha^A) normalized per row; rows with no mass
/// put weight 1 on themselves. With `literal` a row softmax follows.
RelationGraph relation_weights(const Tensor& appearance, const Tensor& position, bool literal);

/// F = alpha (R W_r).
Tensor relation_feature(const Tensor& weights, const Tensor& transformed);

/// R + sum_g F^g.
Tensor fuse_graphs(const Tensor& r, const std::vector<Tensor>& features);

/// One relation graph with its own W_r, W_a1, W_a2 and position network
/// (embedding -> K_c hidden -> d_a, ReLU after each, channel mean).
class GraphModule {
 public:
  GraphModule() = default;
  GraphModule(nn::ParamStore& store, const std::string& name, const RelationDims& dims, Rng& rng);

  /// alpha^P for every ordered pair, K x K. In mask mode pairs farther than
  /// delta are zeroed.
  Tensor position_affinity(const PositionFeatures& u, const RelationOptions& opt) const;
  RelationGraph graph(const Tensor& r, const PositionFeatures& u, const RelationOptions& opt) const;
  Tensor feature(const RelationGraph& g, const Tensor& r) const;

 private:
  RelationDims dims_;
  nn::Linear w_r_, w_a1_, w_a2_, w_p1_, w_p2_;
};

struct RelationOutput {
  Tensor fused;                       // K x d2
  std::vector<RelationGraph> graphs;  // N_g
};

class RelationModule {
 public:
  RelationModule() = default;
  RelationModule(nn::ParamStore& store, const std::string& name, const RelationDims& dims, std::size_t num_graphs,
                 Rng& rng);
  RelationOutput operator()(const Tensor& r, const PositionFeatures& u, const RelationOptions& opt) const;
  std::size_t num_graphs() const { return graphs_.size(); }

 private:
  std::vector<GraphModule> graphs_;
};

/// Binary K x K matrix: 1 for m != n when the proposals overlap (IoU >= thresh)
/// two different ground-truth objects with different class labels.
std::vector<double> build_relation_label(std::span<const OrientedBox> proposals, std::span<const OrientedBox> gt,
                                         double iou_thresh = 0.15);

inline constexpr double kMassClamp = 1e-6;

/// -(1 - M)^2 log M with M clamped to [1e-6, 1 - 1e-6].
Tensor center_of_mass_loss(const Tensor& mass);
double center_of_mass_loss(double mass);

/// M = mean over labeled rows m of sum_n softmax_row(G)_mn * label_mn (0 when
/// no row is labeled), then the center-of-mass loss.
Tensor graph_supervision_loss(const Tensor& graph, std::span<const double> label);
/// The mass M alone (values only).
double graph_mass(const Tensor& graph, std::span<const double> label);

}  // namespace relgraph::relation
