#pragma once

// Oriented 3D boxes that rotate about the vertical axis only, their exact
// intersection-over-union, class-wise 3D NMS, and average precision.

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

namespace relgraph {

using Vec3 = std::array<double, 3>;

struct OrientedBox {
  Vec3 center{0.0, 0.0, 0.0};
  /// Full extents along the box's local x, y and the world z axis.
  Vec3 size{1.0, 1.0, 1.0};
  /// Rotation about +z in radians, kept in [0, 2*pi).
  double heading = 0.0;
  int class_id = 0;
  double score = 1.0;
};

double wrap_angle(double a);
double box_volume(const OrientedBox& b);
bool box_degenerate(const OrientedBox& b);
/// Footprint corners in counter-clockwise order.
std::array<std::array<double, 2>, 4> footprint(const OrientedBox& b);
/// Containment test with an optional tolerance (meters) on every face.
bool contains(const OrientedBox& b, const Vec3& p, double tol = 0.0);

namespace geom {

using Polygon = std::vector<std::array<double, 2>>;

/// Clips `subject` by the convex counter-clockwise `clip` polygon.
Polygon clip_convex(const Polygon& subject, const Polygon& clip, double eps = 1e-9);
double polygon_area(const Polygon& p);

double intersection_volume(const OrientedBox& a, const OrientedBox& b);
/// Exact IoU; 0 when either box has a zero extent.
double iou_3d(const OrientedBox& a, const OrientedBox& b);
/// Sampling estimate of IoU over the axis-aligned bound of both boxes.
double iou_3d_monte_carlo(const OrientedBox& a, const OrientedBox& b, std::size_t samples, std::uint64_t seed);

/// Greedy class-wise suppression in descending score order (ties keep the
/// lower index). Returns kept indices in selection order.
std::vector<std::size_t> nms_3d(std::span<const OrientedBox> boxes, double iou_thresh);

struct PrecisionRecall {
  std::vector<double> precision;
  std::vector<double> recall;
};

/// Per-scene detections and ground truth; detections carry scores.
using SceneBoxes = std::vector<std::vector<OrientedBox>>;

PrecisionRecall precision_recall(const SceneBoxes& dets, const SceneBoxes& gts, int class_id, double iou_thresh);
/// All-point interpolated area under the monotone precision envelope.
double average_precision(const SceneBoxes& dets, const SceneBoxes& gts, int class_id, double iou_thresh);

struct MapResult {
  std::map<int, double> per_class;
  double mean = 0.0;
};

/// Mean over every class that has at least one ground-truth instance.
MapResult mean_average_precision(const SceneBoxes& dets, const SceneBoxes& gts, double iou_thresh);

}  // namespace geom
}  // namespace relgraph
