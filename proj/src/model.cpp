#include "relgraph/model.hpp"

#include <stdexcept>

namespace relgraph {

namespace {

Tensor mean_of(const std::vector<Tensor>& xs) {
  Tensor acc = xs.front();
  for (std::size_t i = 1; i < xs.size(); ++i) acc = ad::add(acc, xs[i]);
  return ad::scale(acc, 1.0 / static_cast<double>(xs.size()));
}

}  // namespace

HeadLossTerms head_losses(const Tensor& raw, const proposal::HeadLayout& layout, std::span<const Vec3> anchors,
                          const Tensor& anchor_rows, std::span<const Vec3> templates, std::span<const OrientedBox> gt,
                          double near_thresh, double far_thresh) {
  const auto assignment = proposal::assign_objectness(anchors, gt, near_thresh, far_thresh);
  std::vector<std::size_t> positive;
  std::vector<loss::BoxTarget> targets;
  bool any_labeled = false;
  for (std::size_t k = 0; k < assignment.size(); ++k) {
    if (assignment[k] != proposal::Objectness::ignore) any_labeled = true;
    if (assignment[k] != proposal::Objectness::positive) continue;
    positive.push_back(k);
    targets.push_back(loss::make_box_target(gt[proposal::nearest_gt(anchors[k], gt)], layout, templates));
  }
  HeadLossTerms t;
  t.obj = any_labeled ? loss::objectness_loss(ad::slice_cols(raw, layout.objectness(), 2), assignment)
                      : Tensor::scalar(0.0);
  t.box = loss::box_loss(raw, layout, anchors, positive, targets, anchor_rows);
  t.sem = loss::semantic_loss(raw, layout, positive, targets);
  return t;
}

Detector::Detector(const RunConfig& cfg, std::uint64_t init_seed)
    : cfg_(cfg),
      layout_(cfg.model.num_heading_bins, cfg.model.num_size_templates, cfg.model.num_classes) {
  validate(cfg_);
  const auto& m = cfg_.model;
  Rng rng(init_seed);
  backbone_ = backbone::Backbone(store_, "backbone", m.backbone, rng);
  const std::size_t d1 = m.seed_dim();
  seed_head_ = proposal::SeedHead(store_, "seed_head", d1, m.seed_hidden, rng);
  aggregator_ = proposal::ClusterAggregator(store_, "cluster", d1, m.cluster_mlp, m.cluster_radius, rng);
  std::vector<std::size_t> widths = m.head_hidden;
  widths.push_back(layout_.width());
  head1_ = nn::Mlp(store_, "head1", m.cluster_dim(), widths, rng, /*plain_last=*/true);
  if (m.num_graphs > 0) {
    pool::PoolDims pd;
    pd.semantic = d1;
    pd.out = m.d2;
    pd.sem_hidden = m.d_s;
    pd.spa_hidden = m.d_l;
    pd.embed = m.d_p;
    pool_ = pool::PointAttentionPool(store_, "pool", pd, rng);
    relation::RelationDims rd;
    rd.appearance = m.d2;
    rd.key = m.d_a;
    rd.embed = m.d_p;
    rd.hidden = m.num_proposals;
    relation_ = relation::RelationModule(store_, "relation", rd, m.num_graphs, rng);
    head2_ = nn::Mlp(store_, "head2", m.cluster_dim() + m.d2 + 3, widths, rng, /*plain_last=*/true);
  }
}

backbone::BackbonePlan Detector::plan(const Scene& scene, std::uint64_t seed) const {
  if (scene.cloud.coords.size() != cfg_.model.backbone.num_points) {
    throw std::invalid_argument("detector: scene has " + std::to_string(scene.cloud.coords.size()) +
                                " points, the model expects " + std::to_string(cfg_.model.backbone.num_points));
  }
  return backbone::plan_backbone(scene.cloud, cfg_.model.backbone, seed);
}

ForwardPass Detector::forward(const backbone::BackbonePlan& plan, std::uint64_t seed) const {
  const auto& m = cfg_.model;
  ForwardPass f;
  backbone::SeedSet seeds = backbone_(plan);
  f.seed_coords = seeds.coords;
  f.seeds = seed_head_(seeds);
  f.clusters = proposal::cluster_pseudo_centers(proposal::rows_to_points(f.seeds.pseudo_centers), m.num_proposals,
                                                m.cluster_radius, m.cluster_group, derive_seed(seed, 1));
  std::vector<std::size_t> anchor_seeds;
  for (const auto& c : f.clusters) {
    f.anchors.push_back(c.anchor);
    anchor_seeds.push_back(c.anchor_seed);
  }
  f.anchor_rows = ad::gather_rows(f.seeds.pseudo_centers, anchor_seeds);
  f.cluster_features = aggregator_(f.seeds, f.clusters);
  f.stage1 = head1_(f.cluster_features);
  if (m.num_graphs == 0) return f;

  const std::size_t k = f.clusters.size();
  const auto raw = f.stage1.values();
  for (std::size_t i = 0; i < k; ++i) {
    const auto p = proposal::decode_head(raw.subspan(i * layout_.width(), layout_.width()), layout_, f.anchors[i],
                                         m.size_templates);
    f.samples.push_back(pool::sample_interior(p.box, f.seed_coords, f.clusters[i].members, m.num_interior,
                                              derive_seed(seed, 2, i)));
  }
  f.appearance = pool_(f.seeds.features, f.seeds.directions, f.samples);
  const auto geo = proposal::decode_geometry(f.stage1, layout_, f.anchor_rows, m.size_templates);
  relation::RelationOptions opt;
  opt.mode = m.position_mode;
  opt.delta = cfg_.effective_delta();
  opt.literal = m.eq5_literal;
  f.relation = relation_(f.appearance, {geo.centers, geo.log_sizes, geo.headings}, opt);
  f.refined = head2_(
      ad::concat_cols({f.cluster_features, f.relation.fused, ad::slice_cols(f.stage1, layout_.direction(), 3)}));
  return f;
}

loss::LossReport Detector::loss(const ForwardPass& f, const Scene& scene) const {
  const auto& t = cfg_.train;
  const auto& m = cfg_.model;
  loss::LossComponents c;
  loss::DirectionLossOptions dopt;
  dopt.sign = t.direction_sign;
  dopt.use_direction = t.use_direction;
  c.dir = loss::direction_loss(f.seeds.pseudo_centers, f.seeds.directions, f.seed_coords,
                               seed_candidates(f.seed_coords, scene.boxes), dopt);
  std::vector<HeadLossTerms> heads;
  heads.push_back(head_losses(f.stage1, layout_, f.anchors, f.anchor_rows, m.size_templates, scene.boxes, t.near_thresh,
                              t.far_thresh));
  if (f.refined.defined()) {
    heads.push_back(head_losses(f.refined, layout_, f.anchors, f.anchor_rows, m.size_templates, scene.boxes, t.near_thresh,
                                t.far_thresh));
  }
  const auto collect = [&](auto pick) {
    std::vector<Tensor> xs;
    for (const auto& h : heads) xs.push_back(pick(h));
    return mean_of(xs);
  };
  c.obj = collect([](const HeadLossTerms& h) { return h.obj; });
  c.sem = collect([](const HeadLossTerms& h) { return h.sem; });
  c.box.center_reg = collect([](const HeadLossTerms& h) { return h.box.center_reg; });
  c.box.heading_cls = collect([](const HeadLossTerms& h) { return h.box.heading_cls; });
  c.box.heading_reg = collect([](const HeadLossTerms& h) { return h.box.heading_reg; });
  c.box.size_cls = collect([](const HeadLossTerms& h) { return h.box.size_cls; });
  c.box.size_reg = collect([](const HeadLossTerms& h) { return h.box.size_reg; });
  c.box.total = collect([](const HeadLossTerms& h) { return h.box.total; });
  c.box.positives = heads.front().box.positives;
  if (t.supervised_graph && !f.relation.graphs.empty()) {
    std::vector<OrientedBox> boxes;
    const auto raw = f.stage1.values();
    for (std::size_t i = 0; i < f.anchors.size(); ++i) {
      boxes.push_back(proposal::decode_head(raw.subspan(i * layout_.width(), layout_.width()), layout_, f.anchors[i],
                                            m.size_templates)
                          .box);
    }
    const auto label = relation::build_relation_label(boxes, scene.boxes);
    std::vector<Tensor> sup;
    for (const auto& g : f.relation.graphs) sup.push_back(relation::graph_supervision_loss(g.weights, label));
    c.sup = mean_of(sup);
  }
  return loss::total_loss(c, t.weights);
}

std::vector<proposal::Proposal> Detector::detect(const ForwardPass& f, double score_thresh, double nms_thresh) const {
  const Tensor& head = f.final_head();
  const auto raw = head.values();
  std::vector<proposal::Proposal> cand;
  for (std::size_t i = 0; i < f.anchors.size(); ++i) {
    auto p = proposal::decode_head(raw.subspan(i * layout_.width(), layout_.width()), layout_, f.anchors[i],
                                   cfg_.model.size_templates);
    if (p.box.score < score_thresh) continue;
    p.cluster_members = f.clusters[i].members;
    if (f.appearance.defined()) {
      const auto r = f.relation.fused.values().subspan(i * f.relation.fused.cols(), f.relation.fused.cols());
      p.appearance.assign(r.begin(), r.end());
    }
    cand.push_back(std::move(p));
  }
  std::vector<OrientedBox> boxes;
  for (const auto& p : cand) boxes.push_back(p.box);
  std::vector<proposal::Proposal> out;
  for (std::size_t idx : geom::nms_3d(boxes, nms_thresh)) out.push_back(cand[idx]);
  return out;
}

std::vector<OrientedBox> Detector::detect_boxes(const ForwardPass& f, double score_thresh, double nms_thresh) const {
  std::vector<OrientedBox> out;
  for (const auto& p : detect(f, score_thresh, nms_thresh)) out.push_back(p.box);
  return out;
}

}  // namespace relgraph
