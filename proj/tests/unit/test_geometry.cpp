#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "relgraph/geometry.hpp"
#include "relgraph/rng.hpp"

using namespace relgraph;
using geom::SceneBoxes;

namespace {

OrientedBox random_box(Rng& rng, int classes = 1) {
  OrientedBox b;
  b.center = {uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, 0, 0.5)};
  b.size = {uniform(rng, 0.3, 1.2), uniform(rng, 0.3, 1.2), uniform(rng, 0.3, 1.2)};
  b.heading = uniform(rng, 0, 2 * M_PI);
  b.class_id = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(classes)));
  b.score = uniform01(rng);
  return b;
}

// Greedy suppression written from scratch: repeatedly keep the best remaining
// box and drop every same-class box overlapping it.
std::vector<std::size_t> reference_nms(const std::vector<OrientedBox>& boxes, double t) {
  std::vector<bool> alive(boxes.size(), true);
  std::vector<std::size_t> keep;
  while (true) {
    std::size_t best = boxes.size();
    for (std::size_t i = 0; i < boxes.size(); ++i)
      if (alive[i] && (best == boxes.size() || boxes[i].score > boxes[best].score)) best = i;
    if (best == boxes.size()) break;
    keep.push_back(best);
    alive[best] = false;
    for (std::size_t i = 0; i < boxes.size(); ++i)
      if (alive[i] && boxes[i].class_id == boxes[best].class_id && geom::iou_3d(boxes[i], boxes[best]) > t)
        alive[i] = false;
  }
  return keep;
}

}  // namespace

TEST_SUITE("geometry-eval") {
  TEST_CASE("iou of identical boxes is one") {
    Rng rng(1);
    for (int i = 0; i < 20; ++i) {
      const auto b = random_box(rng);
      CHECK(geom::iou_3d(b, b) == doctest::Approx(1.0).epsilon(1e-12));
    }
  }

  TEST_CASE("offset unit cubes") {
    const OrientedBox a{{0, 0, 0}, {1, 1, 1}, 0.0, 0, 1.0};
    const OrientedBox b{{0.5, 0, 0}, {1, 1, 1}, 0.0, 0, 1.0};
    CHECK(std::abs(geom::iou_3d(a, b) - 1.0 / 3.0) <= 1e-12);
  }

  TEST_CASE("iou is symmetric, bounded and invariant to a quarter turn of a cube") {
    Rng rng(2);
    for (int i = 0; i < 50; ++i) {
      const auto a = random_box(rng), b = random_box(rng);
      const double ab = geom::iou_3d(a, b);
      CHECK(ab >= 0.0);
      CHECK(ab <= 1.0);
      CHECK(ab == doctest::Approx(geom::iou_3d(b, a)).epsilon(1e-12));
    }
    const OrientedBox c{{0, 0, 0}, {1, 1, 1}, 0.0, 0, 1.0};
    OrientedBox d = c;
    d.heading = M_PI / 2;
    CHECK(geom::iou_3d(c, d) == doctest::Approx(1.0).epsilon(1e-12));
  }

  TEST_CASE("disjoint and vertically separated boxes") {
    const OrientedBox a{{0, 0, 0}, {1, 1, 1}, 0.3, 0, 1.0};
    OrientedBox b = a;
    b.center[2] = 1.5;
    CHECK(geom::iou_3d(a, b) == 0.0);
    b.center = {5, 0, 0};
    CHECK(geom::iou_3d(a, b) == 0.0);
  }

  TEST_CASE("iou agrees with Monte Carlo on a few rotated pairs") {
    Rng rng(3);
    for (int i = 0; i < 5; ++i) {
      const auto a = random_box(rng), b = random_box(rng);
      CHECK(std::abs(geom::iou_3d(a, b) - geom::iou_3d_monte_carlo(a, b, 200000, 10 + i)) <= 0.01);
    }
  }

  TEST_CASE("nms basics") {
    const OrientedBox a{{0, 0, 0}, {1, 1, 1}, 0.0, 0, 0.9};
    OrientedBox b = a;
    b.score = 0.8;
    CHECK(geom::nms_3d(std::vector<OrientedBox>{a}, 0.25) == std::vector<std::size_t>{0});
    CHECK(geom::nms_3d(std::vector<OrientedBox>{b, a}, 0.25) == std::vector<std::size_t>{1});
    OrientedBox other = b;
    other.class_id = 1;
    CHECK(geom::nms_3d(std::vector<OrientedBox>{a, other}, 0.25).size() == 2);
  }

  TEST_CASE("nms matches a brute-force greedy reference") {
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<OrientedBox> boxes;
      for (int i = 0; i < 10; ++i) boxes.push_back(random_box(rng, 2));
      auto got = geom::nms_3d(boxes, 0.25);
      auto want = reference_nms(boxes, 0.25);
      std::sort(got.begin(), got.end());
      std::sort(want.begin(), want.end());
      CHECK(got == want);
    }
  }

  TEST_CASE("ap on perfect and empty detections") {
    Rng rng(5);
    SceneBoxes gts(3);
    for (auto& s : gts)
      for (int i = 0; i < 3; ++i) {
        auto b = random_box(rng);
        b.center[0] += 4.0 * i;
        s.push_back(b);
      }
    SceneBoxes perfect = gts;
    for (auto& s : perfect)
      for (auto& b : s) b.score = 1.0;
    CHECK(geom::average_precision(perfect, gts, 0, 0.5) == 1.0);
    CHECK(geom::average_precision(SceneBoxes(3), gts, 0, 0.5) == 0.0);
    CHECK(geom::mean_average_precision(perfect, gts, 0.25).mean == 1.0);
  }

  TEST_CASE("three-detection precision-recall case") {
    const OrientedBox g1{{0, 0, 0}, {1, 1, 1}, 0.0, 0, 1.0};
    const OrientedBox g2{{5, 0, 0}, {1, 1, 1}, 0.0, 0, 1.0};
    OrientedBox t1 = g1, t2 = g2, f = g1;
    t1.score = 0.9;
    t2.score = 0.8;
    f.center = {10, 10, 0};
    f.score = 0.85;
    const SceneBoxes dets = {{t1, f, t2}};
    const SceneBoxes gts = {{g1, g2}};
    const auto pr = geom::precision_recall(dets, gts, 0, 0.5);
    REQUIRE(pr.precision.size() == 3);
    CHECK(pr.precision == std::vector<double>{1.0, 0.5, 2.0 / 3.0});
    CHECK(pr.recall == std::vector<double>{0.5, 0.5, 1.0});
    // Envelope: 1 up to recall 1/2, then 2/3.
    CHECK(geom::average_precision(dets, gts, 0, 0.5) == doctest::Approx(0.5 + 0.5 * 2.0 / 3.0).epsilon(1e-15));
  }

  TEST_CASE("ap does not increase with the iou threshold") {
    Rng rng(6);
    SceneBoxes gts(4), dets(4);
    for (std::size_t s = 0; s < 4; ++s)
      for (int i = 0; i < 4; ++i) {
        auto g = random_box(rng);
        g.center[0] += 4.0 * i;
        gts[s].push_back(g);
        auto d = g;
        d.center[0] += uniform(rng, -0.3, 0.3);
        d.heading += uniform(rng, -0.4, 0.4);
        d.score = uniform01(rng);
        dets[s].push_back(d);
      }
    double prev = 2.0;
    for (double t = 0.05; t < 1.0; t += 0.05) {
      const double ap = geom::average_precision(dets, gts, 0, t);
      CHECK(ap <= prev + 1e-15);
      prev = ap;
    }
  }

  TEST_CASE("wrap angle") {
    CHECK(wrap_angle(-0.5) == doctest::Approx(2 * M_PI - 0.5));
    CHECK(wrap_angle(2 * M_PI) == doctest::Approx(0.0));
  }
}
