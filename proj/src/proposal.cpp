#include "relgraph/proposal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace relgraph::proposal {

namespace {

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

double dist(const Vec3& a, const Vec3& b) {
  return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]));
}

}  // namespace

HeadLayout::HeadLayout(std::size_t nh, std::size_t ns, std::size_t nc)
    : num_heading_bins(nh), num_size_templates(ns), num_classes(nc) {
  if (nh == 0 || ns == 0 || nc == 0) throw std::invalid_argument("head layout: NH, NS and NC must be positive");
}

double heading_bin_width(std::size_t num_bins) { return 2.0 * std::numbers::pi / static_cast<double>(num_bins); }

HeadingBin heading_to_bin(double heading, std::size_t num_bins) {
  const double w = heading_bin_width(num_bins);
  const double h = wrap_angle(heading);
  auto bin = static_cast<std::size_t>(std::floor(h / w + 0.5));
  double residual = h - static_cast<double>(bin) * w;
  bin %= num_bins;
  return {bin, residual / (0.5 * w)};
}

double bin_to_heading(std::size_t bin, double residual, std::size_t num_bins) {
  const double w = heading_bin_width(num_bins);
  return wrap_angle(static_cast<double>(bin) * w + residual * 0.5 * w);
}

Vec3 gt_direction(const Vec3& g, const Vec3& g_star, double sign) {
  const Vec3 d{g[0] - g_star[0], g[1] - g_star[1], g[2] - g_star[2]};
  const double n = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
  if (n == 0.0) throw std::domain_error("gt_direction: surface point coincides with the center");
  return {sign * d[0] / n, sign * d[1] / n, sign * d[2] / n};
}

// ---- seed head ------------------------------------------------------------

SeedHead::SeedHead(nn::ParamStore& store, const std::string& name, std::size_t feature_dim,
                   const std::vector<std::size_t>& hidden, Rng& rng)
    : dim_(feature_dim) {
  std::vector<std::size_t> widths = hidden;
  widths.push_back(3 + feature_dim + 3);
  mlp_ = nn::Mlp(store, name, feature_dim, widths, rng, /*plain_last=*/true);
}

SeedPredictions SeedHead::operator()(const backbone::SeedSet& seeds) const {
  if (seeds.features.cols() != dim_) {
    throw ad::ShapeError("seed head: expected features of width " + std::to_string(dim_) + ", got " +
                         seeds.features.shape_str());
  }
  const std::size_t m = seeds.coords.size();
  std::vector<double> xyz;
  xyz.reserve(m * 3);
  for (const auto& p : seeds.coords) xyz.insert(xyz.end(), p.begin(), p.end());
  Tensor out = mlp_(seeds.features);
  SeedPredictions preds;
  preds.pseudo_centers = ad::add(Tensor::from(m, 3, std::move(xyz)), ad::slice_cols(out, 0, 3));
  preds.features = ad::add(seeds.features, ad::slice_cols(out, 3, dim_));
  preds.directions = ad::normalize_rows(ad::slice_cols(out, 3 + dim_, 3));
  return preds;
}

// ---- clustering -------------------------------------------------------------

std::vector<Cluster> cluster_pseudo_centers(std::span<const Vec3> pseudo_centers, std::size_t num_clusters,
                                            double radius, std::size_t group, std::uint64_t seed) {
  if (num_clusters > pseudo_centers.size()) {
    throw std::invalid_argument("cluster_pseudo_centers: K_c=" + std::to_string(num_clusters) + " exceeds M=" +
                                std::to_string(pseudo_centers.size()));
  }
  std::vector<Cluster> clusters;
  for (std::size_t idx : backbone::farthest_point_sample(pseudo_centers, num_clusters, seed)) {
    Cluster c;
    c.anchor_seed = idx;
    c.anchor = pseudo_centers[idx];
    c.members = backbone::ball_query(pseudo_centers, c.anchor, radius, group);
    clusters.push_back(std::move(c));
  }
  return clusters;
}

std::vector<Vec3> rows_to_points(const Tensor& t) {
  if (t.cols() != 3) throw ad::ShapeError("rows_to_points: expected 3 columns, got " + t.shape_str());
  std::vector<Vec3> out(t.rows());
  for (std::size_t i = 0; i < t.rows(); ++i) out[i] = {t(i, 0), t(i, 1), t(i, 2)};
  return out;
}

ClusterAggregator::ClusterAggregator(nn::ParamStore& store, const std::string& name, std::size_t feature_dim,
                                     const std::vector<std::size_t>& widths, double radius, Rng& rng)
    : radius_(radius), mlp_(store, name, feature_dim + 6, widths, rng) {}

Tensor ClusterAggregator::operator()(const SeedPredictions& preds, const std::vector<Cluster>& clusters) const {
  if (clusters.empty()) throw std::invalid_argument("cluster aggregation: no clusters");
  const std::size_t group = clusters.front().members.size();
  std::vector<std::size_t> index, anchor_index;
  for (const auto& c : clusters) {
    if (c.members.size() != group) throw std::invalid_argument("cluster aggregation: clusters differ in size");
    for (std::size_t m : c.members) {
      index.push_back(m);
      anchor_index.push_back(c.anchor_seed);
    }
  }
  Tensor offsets = ad::scale(
      ad::sub(ad::gather_rows(preds.pseudo_centers, index), ad::gather_rows(preds.pseudo_centers, anchor_index)),
      1.0 / radius_);
  Tensor rows = ad::concat_cols(
      {ad::gather_rows(preds.features, index), ad::gather_rows(preds.directions, index), offsets});
  return ad::segment_max(mlp_(rows), group);
}

// ---- decoding --------------------------------------------------------------

double Proposal::objectness() const {
  const double m = std::max(objectness_logits[0], objectness_logits[1]);
  const double e0 = std::exp(objectness_logits[0] - m), e1 = std::exp(objectness_logits[1] - m);
  return e1 / (e0 + e1);
}

Proposal decode_head(std::span<const double> raw, const HeadLayout& layout, const Vec3& anchor,
                     std::span<const Vec3> size_templates) {
  if (raw.size() != layout.width()) {
    throw std::invalid_argument("decode_head: raw width " + std::to_string(raw.size()) + " != " +
                                std::to_string(layout.width()));
  }
  if (size_templates.size() != layout.num_size_templates) {
    throw std::invalid_argument("decode_head: expected " + std::to_string(layout.num_size_templates) +
                                " size templates, got " + std::to_string(size_templates.size()));
  }
  const std::size_t nh = layout.num_heading_bins, ns = layout.num_size_templates, nc = layout.num_classes;
  Proposal p;
  p.anchor = anchor;
  p.objectness_logits = {raw[0], raw[1]};
  for (int d = 0; d < 3; ++d) {
    p.box.center[d] = anchor[d] + raw[layout.center() + d];
    p.direction_refinement[d] = raw[layout.direction() + d];
  }
  const std::size_t hb = argmax(raw.subspan(layout.heading_scores(), nh));
  p.box.heading = bin_to_heading(hb, raw[layout.heading_residuals() + hb], nh);
  const std::size_t sb = argmax(raw.subspan(layout.size_scores(), ns));
  for (int d = 0; d < 3; ++d) {
    p.box.size[d] = size_templates[sb][d] * std::exp(raw[layout.size_residuals() + 3 * sb + d]);
  }
  const auto sem = raw.subspan(layout.semantic(), nc);
  p.semantic_logits.assign(sem.begin(), sem.end());
  p.box.class_id = static_cast<int>(argmax(sem));
  p.box.score = p.objectness();
  return p;
}

DecodedGeometry decode_geometry(const Tensor& raw, const HeadLayout& layout, std::span<const Vec3> anchors,
                                std::span<const Vec3> size_templates) {
  std::vector<double> rows;
  for (const auto& a : anchors) rows.insert(rows.end(), a.begin(), a.end());
  return decode_geometry(raw, layout, Tensor::from(anchors.size(), 3, std::move(rows)), size_templates);
}

DecodedGeometry decode_geometry(const Tensor& raw, const HeadLayout& layout, const Tensor& anchors,
                                std::span<const Vec3> size_templates) {
  if (raw.cols() != layout.width() || raw.rows() != anchors.rows() || anchors.cols() != 3) {
    throw ad::ShapeError("decode_geometry: raw " + raw.shape_str() + " does not match layout width " +
                         std::to_string(layout.width()) + " and anchors " + anchors.shape_str());
  }
  const std::size_t k = raw.rows(), nh = layout.num_heading_bins, ns = layout.num_size_templates;
  std::vector<double> heading_base, log_template;
  std::vector<std::size_t> hpick, spick[3];
  const auto v = raw.values();
  for (std::size_t i = 0; i < k; ++i) {
    const auto row = v.subspan(i * layout.width(), layout.width());
    const std::size_t hb = argmax(row.subspan(layout.heading_scores(), nh));
    const std::size_t sb = argmax(row.subspan(layout.size_scores(), ns));
    heading_base.push_back(static_cast<double>(hb) * heading_bin_width(nh));
    hpick.push_back(layout.heading_residuals() + hb);
    for (int d = 0; d < 3; ++d) {
      log_template.push_back(std::log(size_templates[sb][d]));
      spick[d].push_back(layout.size_residuals() + 3 * sb + d);
    }
  }
  DecodedGeometry g;
  g.centers = ad::add(anchors, ad::slice_cols(raw, layout.center(), 3));
  g.headings = ad::add(Tensor::from(k, 1, std::move(heading_base)),
                       ad::scale(ad::pick_cols(raw, hpick), 0.5 * heading_bin_width(nh)));
  g.log_sizes = ad::add(Tensor::from(k, 3, std::move(log_template)),
                        ad::concat_cols({ad::pick_cols(raw, spick[0]), ad::pick_cols(raw, spick[1]),
                                         ad::pick_cols(raw, spick[2])}));
  return g;
}

std::size_t nearest_gt(const Vec3& p, std::span<const OrientedBox> gt) {
  if (gt.empty()) throw std::invalid_argument("nearest_gt: no ground truth");
  std::size_t best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < gt.size(); ++j) {
    const double d = dist(p, gt[j].center);
    if (d < bd) {
      bd = d;
      best = j;
    }
  }
  return best;
}

std::vector<Objectness> assign_objectness(std::span<const Vec3> anchors, std::span<const OrientedBox> gt,
                                          double near_thresh, double far_thresh) {
  if (!(near_thresh > 0.0 && near_thresh < far_thresh)) {
    throw std::invalid_argument("assign_objectness: thresholds must satisfy 0 < near < far");
  }
  std::vector<Objectness> out;
  out.reserve(anchors.size());
  for (const auto& a : anchors) {
    if (gt.empty()) {
      out.push_back(Objectness::negative);
      continue;
    }
    const double d = dist(a, gt[nearest_gt(a, gt)].center);
    out.push_back(d <= near_thresh ? Objectness::positive
                                   : (d > far_thresh ? Objectness::negative : Objectness::ignore));
  }
  return out;
}

}  // namespace relgraph::proposal
