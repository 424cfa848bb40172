#include "relgraph/losses.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace relgraph::loss {

namespace {

double dist(const Vec3& a, const Vec3& b) {
  return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]));
}

Tensor zero() { return Tensor::scalar(0.0); }

}  // namespace

Tensor direction_loss(const Tensor& pseudo_centers, const Tensor& directions, std::span<const Vec3> seed_coords,
                      const SeedCandidates& candidates, const DirectionLossOptions& opt) {
  const std::size_t m = seed_coords.size();
  if (pseudo_centers.rows() != m || directions.rows() != m || candidates.size() != m ||
      pseudo_centers.cols() != 3 || directions.cols() != 3) {
    throw ad::ShapeError("direction_loss: " + std::to_string(m) + " seeds but pseudo centers " +
                         pseudo_centers.shape_str() + ", directions " + directions.shape_str() + " and " +
                         std::to_string(candidates.size()) + " candidate lists");
  }
  std::vector<std::size_t> surface;
  std::vector<double> target, vstar;
  for (std::size_t i = 0; i < m; ++i) {
    if (candidates[i].empty()) continue;
    if (candidates[i].size() > 3) throw std::invalid_argument("direction_loss: more than three candidate centers");
    const Vec3 gp{pseudo_centers(i, 0), pseudo_centers(i, 1), pseudo_centers(i, 2)};
    const Vec3* best = &candidates[i].front();
    for (const auto& c : candidates[i]) {
      if (dist(gp, c) < dist(gp, *best)) best = &c;
    }
    surface.push_back(i);
    target.insert(target.end(), best->begin(), best->end());
    if (seed_coords[i] == *best) {
      vstar.insert(vstar.end(), {0.0, 0.0, 0.0});
    } else {
      const Vec3 v = proposal::gt_direction(seed_coords[i], *best, opt.sign);
      vstar.insert(vstar.end(), v.begin(), v.end());
    }
  }
  if (surface.empty()) throw std::invalid_argument("direction_loss: no surface seed (M_spo = 0)");
  const std::size_t k = surface.size();
  Tensor terms = ad::row_norm(ad::sub(ad::gather_rows(pseudo_centers, surface), Tensor::from(k, 3, std::move(target))));
  if (opt.use_direction) {
    terms = ad::sub(terms, ad::sum_cols(ad::mul(ad::gather_rows(directions, surface),
                                                Tensor::from(k, 3, std::move(vstar)))));
  }
  return ad::mean(terms);
}

Tensor objectness_loss(const Tensor& logits, std::span<const proposal::Objectness> assignment) {
  if (logits.cols() != 2 || logits.rows() != assignment.size()) {
    throw ad::ShapeError("objectness_loss: logits " + logits.shape_str() + " for " +
                         std::to_string(assignment.size()) + " assignments");
  }
  std::vector<std::size_t> labels(assignment.size(), 0);
  std::vector<double> weight(assignment.size(), 0.0);
  bool any = false;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] == proposal::Objectness::ignore) continue;
    labels[i] = assignment[i] == proposal::Objectness::positive ? 1 : 0;
    weight[i] = 1.0;
    any = true;
  }
  if (!any) throw std::invalid_argument("objectness_loss: every proposal is ignored");
  return ad::weighted_cross_entropy(logits, labels, weight);
}

std::size_t size_template_for(const OrientedBox& box, std::span<const Vec3> templates, std::size_t num_classes) {
  if (templates.empty()) throw std::invalid_argument("size_template_for: no templates");
  if (templates.size() == num_classes && box.class_id >= 0 &&
      static_cast<std::size_t>(box.class_id) < templates.size()) {
    return static_cast<std::size_t>(box.class_id);
  }
  std::size_t best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < templates.size(); ++t) {
    double d = 0.0;
    for (int c = 0; c < 3; ++c) {
      const double r = std::log(box.size[c] / templates[t][c]);
      d += r * r;
    }
    if (d < bd) {
      bd = d;
      best = t;
    }
  }
  return best;
}

BoxTarget make_box_target(const OrientedBox& gt, const proposal::HeadLayout& layout,
                          std::span<const Vec3> templates) {
  if (gt.class_id < 0 || static_cast<std::size_t>(gt.class_id) >= layout.num_classes) {
    throw std::invalid_argument("make_box_target: class id " + std::to_string(gt.class_id) + " outside [0, " +
                                std::to_string(layout.num_classes) + ")");
  }
  BoxTarget t;
  t.center = gt.center;
  const auto hb = proposal::heading_to_bin(gt.heading, layout.num_heading_bins);
  t.heading_bin = hb.bin;
  t.heading_residual = hb.residual;
  t.size_template = size_template_for(gt, templates, layout.num_classes);
  for (int c = 0; c < 3; ++c) t.size_residual[c] = std::log(gt.size[c] / templates[t.size_template][c]);
  t.class_id = static_cast<std::size_t>(gt.class_id);
  return t;
}

BoxLoss box_loss(const Tensor& raw, const proposal::HeadLayout& layout, std::span<const Vec3> anchors,
                 std::span<const std::size_t> positive, std::span<const BoxTarget> targets,
                 const Tensor& anchor_rows) {
  if (raw.cols() != layout.width() || raw.rows() != anchors.size()) {
    throw ad::ShapeError("box_loss: raw " + raw.shape_str() + " vs layout width " + std::to_string(layout.width()) +
                         " and " + std::to_string(anchors.size()) + " anchors");
  }
  if (positive.size() != targets.size()) throw std::invalid_argument("box_loss: one target per positive required");
  BoxLoss out;
  out.positives = positive.size();
  if (positive.empty()) {
    out.center_reg = out.heading_cls = out.heading_reg = out.size_cls = out.size_reg = out.total = zero();
    return out;
  }
  const std::size_t p = positive.size();
  const double inv = 1.0 / static_cast<double>(p);
  Tensor rows = ad::gather_rows(raw, positive);
  std::vector<double> center_target, hres_target, sres_target;
  std::vector<std::size_t> hbin, stemp, hpick, spick[3];
  for (std::size_t i = 0; i < p; ++i) {
    const auto& t = targets[i];
    const auto& a = anchors[positive[i]];
    for (int c = 0; c < 3; ++c) center_target.push_back(anchor_rows.defined() ? t.center[c] : t.center[c] - a[c]);
    hbin.push_back(t.heading_bin);
    hpick.push_back(layout.heading_residuals() + t.heading_bin);
    hres_target.push_back(t.heading_residual);
    stemp.push_back(t.size_template);
    for (int c = 0; c < 3; ++c) {
      spick[c].push_back(layout.size_residuals() + 3 * t.size_template + c);
      sres_target.push_back(t.size_residual[c]);
    }
  }
  const std::vector<double> ones(p, 1.0);
  Tensor center = ad::slice_cols(rows, layout.center(), 3);
  if (anchor_rows.defined()) {
    if (anchor_rows.rows() != anchors.size() || anchor_rows.cols() != 3) {
      throw ad::ShapeError("box_loss: anchor rows " + anchor_rows.shape_str() + " for " +
                           std::to_string(anchors.size()) + " anchors");
    }
    center = ad::add(center, ad::gather_rows(anchor_rows, positive));
  }
  out.center_reg =
      ad::scale(ad::sum(ad::smooth_l1(ad::sub(center, Tensor::from(p, 3, center_target)))), inv);
  out.heading_cls =
      ad::weighted_cross_entropy(ad::slice_cols(rows, layout.heading_scores(), layout.num_heading_bins), hbin, ones);
  out.heading_reg =
      ad::scale(ad::sum(ad::smooth_l1(ad::sub(ad::pick_cols(rows, hpick), Tensor::from(p, 1, hres_target)))), inv);
  out.size_cls =
      ad::weighted_cross_entropy(ad::slice_cols(rows, layout.size_scores(), layout.num_size_templates), stemp, ones);
  Tensor sres = ad::concat_cols({ad::pick_cols(rows, spick[0]), ad::pick_cols(rows, spick[1]),
                                 ad::pick_cols(rows, spick[2])});
  out.size_reg = ad::scale(ad::sum(ad::smooth_l1(ad::sub(sres, Tensor::from(p, 3, sres_target)))), inv);
  out.total = ad::add(ad::add(ad::add(out.center_reg, ad::scale(out.heading_cls, 0.1)),
                              ad::add(out.heading_reg, ad::scale(out.size_cls, 0.1))),
                      out.size_reg);
  return out;
}

Tensor semantic_loss(const Tensor& raw, const proposal::HeadLayout& layout, std::span<const std::size_t> positive,
                     std::span<const BoxTarget> targets) {
  if (positive.size() != targets.size()) throw std::invalid_argument("semantic_loss: one target per positive required");
  if (raw.cols() != layout.width()) {
    throw ad::ShapeError("semantic_loss: raw " + raw.shape_str() + " vs layout width " + std::to_string(layout.width()));
  }
  if (positive.empty()) return zero();
  std::vector<std::size_t> labels;
  for (const auto& t : targets) labels.push_back(t.class_id);
  const std::vector<double> ones(positive.size(), 1.0);
  return ad::weighted_cross_entropy(ad::slice_cols(ad::gather_rows(raw, positive), layout.semantic(),
                                                   layout.num_classes),
                                    labels, ones);
}

std::vector<std::string> LossReport::field_names() {
  return {"total", "L_dir", "L_obj", "L_box", "L_c_reg", "L_h_cls", "L_h_reg", "L_s_cls", "L_s_reg", "L_sem", "L_sup"};
}

std::vector<double> LossReport::field_values() const {
  return {total, dir, obj, box, center_reg, heading_cls, heading_reg, size_cls, size_reg, sem, sup};
}

LossReport total_loss(const LossComponents& c, const LossWeights& w) {
  if (w.obj < 0.0 || w.box < 0.0 || w.sem < 0.0 || w.sup < 0.0) {
    throw std::invalid_argument("total_loss: loss weights must be non-negative");
  }
  const Tensor sup = c.sup.defined() ? c.sup : zero();
  const std::pair<const char*, const Tensor*> parts[] = {
      {"L_dir", &c.dir},           {"L_obj", &c.obj},
      {"L_c_reg", &c.box.center_reg}, {"L_h_cls", &c.box.heading_cls},
      {"L_h_reg", &c.box.heading_reg}, {"L_s_cls", &c.box.size_cls},
      {"L_s_reg", &c.box.size_reg},  {"L_box", &c.box.total},
      {"L_sem", &c.sem},           {"L_sup", &sup}};
  for (const auto& [name, t] : parts) {
    if (!t->defined()) throw std::invalid_argument(std::string("total_loss: component ") + name + " is missing");
    if (t->size() != 1) throw ad::ShapeError(std::string("total_loss: component ") + name + " is not a scalar");
    if (!std::isfinite(t->item())) {
      throw ad::NonFiniteError(std::string("loss component ") + name + " is not finite (" +
                               std::to_string(t->item()) + ")");
    }
  }
  LossReport r;
  r.total_tensor = ad::add(ad::add(c.dir, ad::scale(c.obj, w.obj)),
                           ad::add(ad::add(ad::scale(c.box.total, w.box), ad::scale(c.sem, w.sem)),
                                   ad::scale(sup, w.sup)));
  r.total = r.total_tensor.item();
  r.dir = c.dir.item();
  r.obj = c.obj.item();
  r.box = c.box.total.item();
  r.sem = c.sem.item();
  r.sup = sup.item();
  r.center_reg = c.box.center_reg.item();
  r.heading_cls = c.box.heading_cls.item();
  r.heading_reg = c.box.heading_reg.item();
  r.size_cls = c.box.size_cls.item();
  r.size_reg = c.box.size_reg.item();
  r.positives = c.box.positives;
  return r;
}

}  // namespace relgraph::loss
