#include "relgraph/relation_graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace relgraph::relation {

std::size_t relation_param_count(std::size_t k_c, std::size_t d_p, std::size_t d_a, std::size_t d2) {
  return k_c * d_p + d_a * (2 * d2 + k_c) + d2 * d2;
}

double delta_from_extent(const Vec3& extent) {
  return 0.25 * std::sqrt(extent[0] * extent[0] + extent[1] * extent[1] + extent[2] * extent[2]);
}

Tensor pair_descriptor(const PositionFeatures& u) {
  const std::size_t k = u.centers.rows();
  if (u.centers.cols() != 3 || u.log_sizes.rows() != k || u.log_sizes.cols() != 3 || u.headings.rows() != k ||
      u.headings.cols() != 1) {
    throw ad::ShapeError("pair_descriptor: inconsistent position features " + u.centers.shape_str() + ", " +
                         u.log_sizes.shape_str() + ", " + u.headings.shape_str());
  }
  std::vector<std::size_t> first, second;
  first.reserve(k * k);
  second.reserve(k * k);
  for (std::size_t m = 0; m < k; ++m) {
    for (std::size_t n = 0; n < k; ++n) {
      first.push_back(m);
      second.push_back(n);
    }
  }
  Tensor dl = ad::sub(ad::gather_rows(u.centers, second), ad::gather_rows(u.centers, first));
  Tensor ls_m = ad::gather_rows(u.log_sizes, first);
  Tensor ls_n = ad::gather_rows(u.log_sizes, second);
  Tensor dh = ad::sub(ad::gather_rows(u.headings, second), ad::gather_rows(u.headings, first));
  return ad::concat_cols({dl, ad::sub(ls_n, ls_m), dh, ad::row_norm(dl), ad::sum_cols(ls_m), ad::sum_cols(ls_n)});
}

std::vector<double> center_distances(const Tensor& centers) {
  const std::size_t k = centers.rows();
  std::vector<double> d(k * k);
  for (std::size_t m = 0; m < k; ++m) {
    for (std::size_t n = 0; n < k; ++n) {
      double s = 0.0;
      for (std::size_t c = 0; c < 3; ++c) s += (centers(n, c) - centers(m, c)) * (centers(n, c) - centers(m, c));
      d[m * k + n] = std::sqrt(s);
    }
  }
  return d;
}

Tensor appearance_affinity(const Tensor& projected_m, const Tensor& projected_n, std::size_t d_a) {
  if (projected_m.cols() != d_a || projected_n.cols() != d_a) {
    throw ad::ShapeError("appearance_affinity: expected width " + std::to_string(d_a) + ", got " +
                         projected_m.shape_str() + " and " + projected_n.shape_str());
  }
  return ad::scale(ad::matmul(projected_m, ad::transpose(projected_n)), 1.0 / std::sqrt(static_cast<double>(d_a)));
}

RelationGraph relation_weights(const Tensor& appearance, const Tensor& position, bool literal) {
  const std::size_t k = appearance.rows();
  if (appearance.cols() != k || position.rows() != k || position.cols() != k) {
    throw ad::ShapeError("relation_weights: expected two square matrices, got " + appearance.shape_str() + " and " +
                         position.shape_str());
  }
  // Shifting each row of alpha^A by a constant cancels in the normalization.
  std::vector<double> shift(k * k);
  for (std::size_t m = 0; m < k; ++m) {
    double mx = appearance(m, 0);
    for (std::size_t n = 1; n < k; ++n) mx = std::max(mx, appearance(m, n));
    std::fill_n(shift.begin() + static_cast<std::ptrdiff_t>(m * k), k, mx);
  }
  RelationGraph g;
  g.appearance = appearance;
  g.position = position;
  g.inner = ad::row_normalize_self_fallback(
      ad::mul(position, ad::exp(ad::sub(appearance, Tensor::from(k, k, std::move(shift))))));
  g.weights = literal ? ad::softmax_rows(g.inner) : g.inner;
  return g;
}

Tensor relation_feature(const Tensor& weights, const Tensor& transformed) {
  return ad::matmul(weights, transformed);
}

Tensor fuse_graphs(const Tensor& r, const std::vector<Tensor>& features) {
  Tensor out = r;
  for (const auto& f : features) {
    if (f.rows() != r.rows() || f.cols() != r.cols()) {
      throw ad::ShapeError("fuse_graphs: relation feature " + f.shape_str() + " does not match " + r.shape_str());
    }
    out = ad::add(out, f);
  }
  return out;
}

GraphModule::GraphModule(nn::ParamStore& store, const std::string& name, const RelationDims& dims, Rng& rng)
    : dims_(dims),
      w_r_(store, name + ".w_r", dims.appearance, dims.appearance, rng, false),
      w_a1_(store, name + ".w_a1", dims.appearance, dims.key, rng, false),
      w_a2_(store, name + ".w_a2", dims.appearance, dims.key, rng, false),
      w_p1_(store, name + ".w_p1", dims.embed, dims.hidden, rng, false),
      w_p2_(store, name + ".w_p2", dims.hidden, dims.key, rng, false) {}

Tensor GraphModule::position_affinity(const PositionFeatures& u, const RelationOptions& opt) const {
  const std::size_t k = u.centers.rows();
  Tensor emb = nn::sinusoidal_embedding(pair_descriptor(u), dims_.embed);
  Tensor alpha = ad::reshape(ad::mean_cols(ad::relu(w_p2_(ad::relu(w_p1_(emb))))), k, k);
  if (opt.mode == PositionMode::mask) {
    if (!(opt.delta > 0.0)) throw std::invalid_argument("position_affinity: mask mode needs delta > 0");
    std::vector<double> keep = center_distances(u.centers);
    for (double& d : keep) d = d > opt.delta ? 0.0 : 1.0;
    alpha = ad::mul(alpha, Tensor::from(k, k, std::move(keep)));
  }
  return alpha;
}

RelationGraph GraphModule::graph(const Tensor& r, const PositionFeatures& u, const RelationOptions& opt) const {
  if (r.rows() != u.centers.rows()) {
    throw ad::ShapeError("relation graph: appearance " + r.shape_str() + " vs positions " + u.centers.shape_str());
  }
  return relation_weights(appearance_affinity(w_a1_(r), w_a2_(r), dims_.key), position_affinity(u, opt),
                          opt.literal);
}

Tensor GraphModule::feature(const RelationGraph& g, const Tensor& r) const {
  return relation_feature(g.weights, w_r_(r));
}

RelationModule::RelationModule(nn::ParamStore& store, const std::string& name, const RelationDims& dims,
                               std::size_t num_graphs, Rng& rng) {
  for (std::size_t i = 0; i < num_graphs; ++i) {
    graphs_.emplace_back(store, name + ".g" + std::to_string(i + 1), dims, rng);
  }
}

RelationOutput RelationModule::operator()(const Tensor& r, const PositionFeatures& u,
                                          const RelationOptions& opt) const {
  RelationOutput out;
  std::vector<Tensor> feats;
  for (const auto& g : graphs_) {
    out.graphs.push_back(g.graph(r, u, opt));
    feats.push_back(g.feature(out.graphs.back(), r));
  }
  out.fused = fuse_graphs(r, feats);
  return out;
}

std::vector<double> build_relation_label(std::span<const OrientedBox> proposals, std::span<const OrientedBox> gt,
                                         double iou_thresh) {
  const std::size_t k = proposals.size();
  std::vector<std::vector<std::size_t>> hits(k);
  for (std::size_t m = 0; m < k; ++m) {
    for (std::size_t j = 0; j < gt.size(); ++j) {
      if (geom::iou_3d(proposals[m], gt[j]) >= iou_thresh) hits[m].push_back(j);
    }
  }
  std::vector<double> label(k * k, 0.0);
  for (std::size_t m = 0; m < k; ++m) {
    for (std::size_t n = 0; n < k; ++n) {
      if (m == n) continue;
      bool related = false;
      for (std::size_t a : hits[m]) {
        for (std::size_t b : hits[n]) {
          if (a != b && gt[a].class_id != gt[b].class_id) related = true;
        }
      }
      label[m * k + n] = related ? 1.0 : 0.0;
    }
  }
  return label;
}

Tensor center_of_mass_loss(const Tensor& mass) {
  Tensor m = ad::clamp(mass, kMassClamp, 1.0 - kMassClamp);
  return ad::neg(ad::mul(ad::square(ad::add_scalar(ad::neg(m), 1.0)), ad::log(m)));
}

double center_of_mass_loss(double mass) {
  const double m = std::clamp(mass, kMassClamp, 1.0 - kMassClamp);
  return -(1.0 - m) * (1.0 - m) * std::log(m);
}

namespace {

std::vector<double> labeled_row_weights(std::size_t k, std::span<const double> label) {
  if (label.size() != k * k) {
    throw std::invalid_argument("graph supervision: label has " + std::to_string(label.size()) +
                                " entries for a " + std::to_string(k) + "x" + std::to_string(k) + " graph");
  }
  std::vector<double> w(k, 0.0);
  std::size_t rows = 0;
  for (std::size_t m = 0; m < k; ++m) {
    for (std::size_t n = 0; n < k; ++n) {
      if (label[m * k + n] != 0.0) {
        w[m] = 1.0;
        ++rows;
        break;
      }
    }
  }
  for (double& x : w) x = rows ? x / static_cast<double>(rows) : 0.0;
  return w;
}

}  // namespace

Tensor graph_supervision_loss(const Tensor& graph, std::span<const double> label) {
  const std::size_t k = graph.rows();
  if (graph.cols() != k) throw ad::ShapeError("graph supervision: graph must be square, got " + graph.shape_str());
  Tensor row_mass = ad::sum_cols(ad::mul(ad::softmax_rows(graph), Tensor::from(k, k, {label.begin(), label.end()})));
  Tensor mass = ad::sum(ad::mul(row_mass, Tensor::from(k, 1, labeled_row_weights(k, label))));
  return center_of_mass_loss(mass);
}

double graph_mass(const Tensor& graph, std::span<const double> label) {
  const std::size_t k = graph.rows();
  const auto w = labeled_row_weights(k, label);
  double mass = 0.0;
  for (std::size_t m = 0; m < k; ++m) {
    if (w[m] == 0.0) continue;
    double mx = graph(m, 0);
    for (std::size_t n = 1; n < k; ++n) mx = std::max(mx, graph(m, n));
    double z = 0.0, hit = 0.0;
    for (std::size_t n = 0; n < k; ++n) {
      const double e = std::exp(graph(m, n) - mx);
      z += e;
      hit += e * label[m * k + n];
    }
    mass += w[m] * hit / z;
  }
  return mass;
}

}  // namespace relgraph::relation
