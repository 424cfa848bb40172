#include "relgraph/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <set>

#include "relgraph/rng.hpp"

namespace relgraph {

double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double w = std::fmod(a, two_pi);
  if (w < 0.0) w += two_pi;
  if (w >= two_pi) w -= two_pi;
  return w;
}

double box_volume(const OrientedBox& b) { return b.size[0] * b.size[1] * b.size[2]; }

bool box_degenerate(const OrientedBox& b) { return !(b.size[0] > 0.0 && b.size[1] > 0.0 && b.size[2] > 0.0); }

std::array<std::array<double, 2>, 4> footprint(const OrientedBox& b) {
  const double c = std::cos(b.heading), s = std::sin(b.heading);
  const double hx = 0.5 * b.size[0], hy = 0.5 * b.size[1];
  const std::array<std::array<double, 2>, 4> local{{{hx, hy}, {-hx, hy}, {-hx, -hy}, {hx, -hy}}};
  std::array<std::array<double, 2>, 4> out{};
  for (std::size_t i = 0; i < 4; ++i) {
    out[i] = {b.center[0] + c * local[i][0] - s * local[i][1], b.center[1] + s * local[i][0] + c * local[i][1]};
  }
  return out;
}

bool contains(const OrientedBox& b, const Vec3& p, double tol) {
  const double dx = p[0] - b.center[0], dy = p[1] - b.center[1];
  const double c = std::cos(b.heading), s = std::sin(b.heading);
  const double lx = c * dx + s * dy;
  const double ly = -s * dx + c * dy;
  return std::abs(lx) <= 0.5 * b.size[0] + tol && std::abs(ly) <= 0.5 * b.size[1] + tol &&
         std::abs(p[2] - b.center[2]) <= 0.5 * b.size[2] + tol;
}

namespace geom {

namespace {

double cross(const std::array<double, 2>& o, const std::array<double, 2>& a, const std::array<double, 2>& b) {
  return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

std::array<double, 2> line_hit(const std::array<double, 2>& p, const std::array<double, 2>& q,
                               const std::array<double, 2>& a, const std::array<double, 2>& b) {
  const double d1 = cross(a, b, p);
  const double d2 = cross(a, b, q);
  const double t = d1 / (d1 - d2);
  return {p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])};
}

}  // namespace

Polygon clip_convex(const Polygon& subject, const Polygon& clip, double eps) {
  Polygon out = subject;
  for (std::size_t e = 0; e < clip.size() && !out.empty(); ++e) {
    const auto& a = clip[e];
    const auto& b = clip[(e + 1) % clip.size()];
    Polygon in = std::move(out);
    out.clear();
    for (std::size_t i = 0; i < in.size(); ++i) {
      const auto& p = in[i];
      const auto& q = in[(i + 1) % in.size()];
      const double dp = cross(a, b, p);
      const double dq = cross(a, b, q);
      const bool p_in = dp >= -eps;
      const bool q_in = dq >= -eps;
      if (p_in) out.push_back(p);
      if (p_in != q_in && std::abs(dp - dq) > eps) out.push_back(line_hit(p, q, a, b));
    }
  }
  return out;
}

double polygon_area(const Polygon& p) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto& a = p[i];
    const auto& b = p[(i + 1) % p.size()];
    s += a[0] * b[1] - a[1] * b[0];
  }
  return 0.5 * std::abs(s);
}

double intersection_volume(const OrientedBox& a, const OrientedBox& b) {
  const double za0 = a.center[2] - 0.5 * a.size[2], za1 = a.center[2] + 0.5 * a.size[2];
  const double zb0 = b.center[2] - 0.5 * b.size[2], zb1 = b.center[2] + 0.5 * b.size[2];
  const double dz = std::min(za1, zb1) - std::max(za0, zb0);
  if (dz <= 0.0) return 0.0;
  const auto fa = footprint(a);
  const auto fb = footprint(b);
  const Polygon pa(fa.begin(), fa.end());
  const Polygon pb(fb.begin(), fb.end());
  return polygon_area(clip_convex(pa, pb)) * dz;
}

double iou_3d(const OrientedBox& a, const OrientedBox& b) {
  if (box_degenerate(a) || box_degenerate(b)) return 0.0;
  const double inter = intersection_volume(a, b);
  const double uni = box_volume(a) + box_volume(b) - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double iou_3d_monte_carlo(const OrientedBox& a, const OrientedBox& b, std::size_t samples, std::uint64_t seed) {
  if (box_degenerate(a) || box_degenerate(b)) return 0.0;
  Vec3 lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
  for (const auto* box : {&a, &b}) {
    for (const auto& c : footprint(*box)) {
      lo[0] = std::min(lo[0], c[0]);
      hi[0] = std::max(hi[0], c[0]);
      lo[1] = std::min(lo[1], c[1]);
      hi[1] = std::max(hi[1], c[1]);
    }
    lo[2] = std::min(lo[2], box->center[2] - 0.5 * box->size[2]);
    hi[2] = std::max(hi[2], box->center[2] + 0.5 * box->size[2]);
  }
  Rng rng(seed);
  std::size_t in_both = 0, in_any = 0;
  for (std::size_t i = 0; i < samples; ++i) {
    const Vec3 p{uniform(rng, lo[0], hi[0]), uniform(rng, lo[1], hi[1]), uniform(rng, lo[2], hi[2])};
    const bool ia = contains(a, p), ib = contains(b, p);
    in_both += (ia && ib);
    in_any += (ia || ib);
  }
  return in_any == 0 ? 0.0 : static_cast<double>(in_both) / static_cast<double>(in_any);
}

std::vector<std::size_t> nms_3d(std::span<const OrientedBox> boxes, double iou_thresh) {
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return boxes[i].score > boxes[j].score; });
  std::vector<std::size_t> kept;
  std::vector<bool> suppressed(boxes.size(), false);
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const std::size_t i = order[oi];
    if (suppressed[i]) continue;
    kept.push_back(i);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const std::size_t j = order[oj];
      if (suppressed[j] || boxes[j].class_id != boxes[i].class_id) continue;
      if (iou_3d(boxes[i], boxes[j]) > iou_thresh) suppressed[j] = true;
    }
  }
  return kept;
}

PrecisionRecall precision_recall(const SceneBoxes& dets, const SceneBoxes& gts, int class_id, double iou_thresh) {
  struct Det {
    double score;
    std::size_t scene;
    const OrientedBox* box;
  };
  std::vector<Det> pool;
  for (std::size_t s = 0; s < dets.size(); ++s) {
    for (const auto& d : dets[s]) {
      if (d.class_id == class_id) pool.push_back({d.score, s, &d});
    }
  }
  std::stable_sort(pool.begin(), pool.end(), [](const Det& a, const Det& b) { return a.score > b.score; });

  std::size_t npos = 0;
  std::vector<std::vector<bool>> matched(gts.size());
  for (std::size_t s = 0; s < gts.size(); ++s) {
    matched[s].assign(gts[s].size(), false);
    for (const auto& g : gts[s]) npos += (g.class_id == class_id);
  }

  PrecisionRecall pr;
  std::size_t tp = 0, fp = 0;
  for (const auto& d : pool) {
    double best = -1.0;
    std::size_t best_j = 0;
    if (d.scene < gts.size()) {
      for (std::size_t j = 0; j < gts[d.scene].size(); ++j) {
        const auto& g = gts[d.scene][j];
        if (g.class_id != class_id) continue;
        const double iou = iou_3d(*d.box, g);
        if (iou > best) {
          best = iou;
          best_j = j;
        }
      }
    }
    if (best >= iou_thresh && !matched[d.scene][best_j]) {
      matched[d.scene][best_j] = true;
      ++tp;
    } else {
      ++fp;
    }
    pr.precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    pr.recall.push_back(npos == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(npos));
  }
  return pr;
}

double average_precision(const SceneBoxes& dets, const SceneBoxes& gts, int class_id, double iou_thresh) {
  const auto pr = precision_recall(dets, gts, class_id, iou_thresh);
  if (pr.precision.empty()) return 0.0;
  std::vector<double> mrec{0.0}, mpre{0.0};
  mrec.insert(mrec.end(), pr.recall.begin(), pr.recall.end());
  mpre.insert(mpre.end(), pr.precision.begin(), pr.precision.end());
  mrec.push_back(1.0);
  mpre.push_back(0.0);
  for (std::size_t i = mpre.size() - 1; i > 0; --i) mpre[i - 1] = std::max(mpre[i - 1], mpre[i]);
  double ap = 0.0;
  for (std::size_t i = 1; i < mrec.size(); ++i) {
    if (mrec[i] != mrec[i - 1]) ap += (mrec[i] - mrec[i - 1]) * mpre[i];
  }
  return ap;
}

MapResult mean_average_precision(const SceneBoxes& dets, const SceneBoxes& gts, double iou_thresh) {
  std::set<int> classes;
  for (const auto& scene : gts)
    for (const auto& g : scene) classes.insert(g.class_id);
  MapResult out;
  for (int c : classes) out.per_class[c] = average_precision(dets, gts, c, iou_thresh);
  if (!classes.empty()) {
    double s = 0.0;
    for (const auto& [c, ap] : out.per_class) s += ap;
    out.mean = s / static_cast<double>(classes.size());
  }
  return out;
}

}  // namespace geom
}  // namespace relgraph
