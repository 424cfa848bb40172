#include <cmath>

#include "doctest.h"
#include "relgraph/config.hpp"
#include "relgraph/gradcheck.hpp"
#include "relgraph/model.hpp"
#include "relgraph/relation_graph.hpp"

using namespace relgraph;
using namespace relgraph::relation;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, double s = 1.0) {
  std::vector<double> v(r * c);
  for (auto& x : v) x = s * normal(rng);
  return Tensor::from(r, c, v);
}

PositionFeatures positions(const std::vector<Vec3>& centers) {
  std::vector<double> c, s, h;
  for (const auto& p : centers) {
    c.insert(c.end(), p.begin(), p.end());
    s.insert(s.end(), {0.0, 0.0, 0.0});
    h.push_back(0.0);
  }
  const std::size_t k = centers.size();
  return {Tensor::from(k, 3, c), Tensor::from(k, 3, s), Tensor::from(k, 1, h)};
}

}  // namespace

TEST_SUITE("relation-graph") {
  TEST_CASE("appearance affinity") {
    SUBCASE("zero key gives zero") {
      Rng rng(1);
      const Tensor a = appearance_affinity(Tensor::zeros(3, 4), random_matrix(3, 4, rng), 4);
      for (std::size_t n = 0; n < 3; ++n) CHECK(a(0, n) == 0.0);
    }
    SUBCASE("unit vectors give 1/sqrt(d_a)") {
      const Tensor e = Tensor::from(1, 4, {1, 0, 0, 0});
      CHECK(appearance_affinity(e, e, 4)(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
    }
    SUBCASE("random instance against direct arithmetic") {
      Rng rng(2);
      const Tensor q = random_matrix(5, 6, rng), k = random_matrix(5, 6, rng);
      const Tensor a = appearance_affinity(q, k, 6);
      for (std::size_t m = 0; m < 5; ++m)
        for (std::size_t n = 0; n < 5; ++n) {
          double dot = 0.0;
          for (std::size_t c = 0; c < 6; ++c) dot += q(m, c) * k(n, c);
          CHECK(std::abs(a(m, n) - dot / std::sqrt(6.0)) <= 1e-9);
        }
    }
  }

  TEST_CASE("position affinity") {
    nn::ParamStore store;
    Rng rng(3);
    RelationDims dims{8, 6, 16, 4};
    GraphModule g(store, "g", dims, rng);
    RelationOptions opt;
    opt.delta = 1.0;
    SUBCASE("pairs at twice delta are masked") {
      const Tensor p = g.position_affinity(positions({{0, 0, 0}, {2, 0, 0}}), opt);
      CHECK(p(0, 1) == 0.0);
      CHECK(p(1, 0) == 0.0);
    }
    SUBCASE("zero position weights give zero everywhere") {
      for (const auto& name : store.names()) {
        if (name.find("w_p") == std::string::npos) continue;
        auto t = store.get(name);
        for (auto& v : t.mutable_values()) v = 0.0;
      }
      opt.mode = PositionMode::encoding;
      const Tensor p = g.position_affinity(positions({{0, 0, 0}, {0.3, 0, 0}, {0, 0.5, 0}}), opt);
      for (double v : p.values()) CHECK(v == 0.0);
    }
    SUBCASE("non-negative") {
      opt.mode = PositionMode::encoding;
      const Tensor p = g.position_affinity(positions({{0, 0, 0}, {0.3, 0, 0}, {0, 0.5, 0}}), opt);
      for (double v : p.values()) CHECK(v >= 0.0);
    }
  }

  TEST_CASE("delta for a 4 x 4 x 3 room") {
    CHECK(delta_from_extent({4, 4, 3}) == doctest::Approx(std::sqrt(41.0) / 4.0).epsilon(1e-15));
    CHECK(delta_from_extent({4, 4, 3}) == doctest::Approx(1.6008).epsilon(1e-4));
  }

  TEST_CASE("relation weights") {
    SUBCASE("symmetric equal affinities give halves") {
      const auto g = relation_weights(Tensor::full(2, 2, 0.3), Tensor::full(2, 2, 0.7), true);
      for (double v : g.weights.values()) CHECK(v == doctest::Approx(0.5).epsilon(1e-15));
    }
    SUBCASE("single unmasked neighbor keeps the argmax") {
      Rng rng(4);
      const Tensor app = random_matrix(3, 3, rng);
      const Tensor pos = Tensor::from(3, 3, {0, 1, 0, 1, 0, 0, 0, 0, 1});
      const auto g = relation_weights(app, pos, true);
      CHECK(g.inner(0, 1) == doctest::Approx(1.0));
      CHECK(g.inner(0, 0) == 0.0);
      for (std::size_t m = 0; m < 3; ++m) {
        std::size_t best = 0;
        for (std::size_t n = 1; n < 3; ++n)
          if (g.weights(m, n) > g.weights(m, best)) best = n;
        std::size_t want = 0;
        for (std::size_t n = 1; n < 3; ++n)
          if (pos(m, n) > pos(m, want)) want = n;
        CHECK(best == want);
      }
    }
    SUBCASE("random 5 x 5 against brute force") {
      Rng rng(5);
      const Tensor app = random_matrix(5, 5, rng);
      std::vector<double> pv(25);
      for (auto& x : pv) x = uniform01(rng);
      const Tensor pos = Tensor::from(5, 5, pv);
      for (bool literal : {false, true}) {
        const auto g = relation_weights(app, pos, literal);
        for (std::size_t m = 0; m < 5; ++m) {
          double z = 0.0;
          std::vector<double> inner(5);
          for (std::size_t n = 0; n < 5; ++n) z += pos(m, n) * std::exp(app(m, n));
          for (std::size_t n = 0; n < 5; ++n) inner[n] = pos(m, n) * std::exp(app(m, n)) / z;
          double zs = 0.0;
          for (double v : inner) zs += std::exp(v);
          for (std::size_t n = 0; n < 5; ++n) {
            const double want = literal ? std::exp(inner[n]) / zs : inner[n];
            CHECK(std::abs(g.weights(m, n) - want) <= 1e-9);
          }
        }
      }
    }
    SUBCASE("rows without mass fall back to themselves") {
      const auto g = relation_weights(Tensor::zeros(2, 2), Tensor::zeros(2, 2), false);
      CHECK(g.weights(0, 0) == 1.0);
      CHECK(g.weights(1, 1) == 1.0);
      CHECK(g.weights(0, 1) == 0.0);
    }
  }

  TEST_CASE("relation features") {
    Rng rng(6);
    const Tensor t = random_matrix(4, 3, rng);
    SUBCASE("identity weights pass the transformed rows through") {
      const Tensor eye = Tensor::from(4, 4, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
      const Tensor f = relation_feature(eye, t);
      for (std::size_t i = 0; i < t.size(); ++i) CHECK(f.values()[i] == t.values()[i]);
    }
    SUBCASE("equal rows are preserved by row-stochastic mixing") {
      const Tensor same = Tensor::from(4, 3, {1, 2, 3, 1, 2, 3, 1, 2, 3, 1, 2, 3});
      const auto g = relation_weights(random_matrix(4, 4, rng), Tensor::full(4, 4, 0.5), true);
      const Tensor f = relation_feature(g.weights, same);
      for (std::size_t m = 0; m < 4; ++m)
        for (std::size_t c = 0; c < 3; ++c) CHECK(f(m, c) == doctest::Approx(same(0, c)).epsilon(1e-12));
    }
    SUBCASE("random instance against a matrix product") {
      const Tensor w = random_matrix(4, 4, rng);
      const Tensor f = relation_feature(w, t);
      for (std::size_t m = 0; m < 4; ++m)
        for (std::size_t c = 0; c < 3; ++c) {
          double s = 0.0;
          for (std::size_t n = 0; n < 4; ++n) s += w(m, n) * t(n, c);
          CHECK(std::abs(f(m, c) - s) <= 1e-9);
        }
    }
  }

  TEST_CASE("fusion") {
    Rng rng(7);
    const Tensor r = random_matrix(3, 5, rng);
    const Tensor zero = fuse_graphs(r, {Tensor::zeros(3, 5), Tensor::zeros(3, 5), Tensor::zeros(3, 5)});
    for (std::size_t i = 0; i < r.size(); ++i) CHECK(zero.values()[i] == r.values()[i]);
    const Tensor cancel = fuse_graphs(r, {ad::neg(r)});
    for (double v : cancel.values()) CHECK(v == 0.0);
  }

  TEST_CASE("census") {
    CHECK(relation_param_count(256, 256, 256, 256) == 327680);
    CHECK(3 * relation_param_count(256, 256, 256, 256) == 983040);
    CHECK(relation_param_count(1, 1, 1, 1) == 5);
    CHECK(relation_param_count(32, 64, 64, 64) == 16384);
    const Detector desk(preset("desk"), 0);
    CHECK(desk.relation_parameters() == 3 * 16384);
    const Detector sun(preset("paper-sun"), 0);
    CHECK(sun.relation_parameters() == 983040);
  }

  TEST_CASE("relation labels") {
    const OrientedBox chair{{0, 0, 0.4}, {0.6, 0.6, 0.8}, 0.0, 0, 1.0};
    const OrientedBox desk{{2, 0, 0.4}, {1.2, 0.8, 0.8}, 0.0, 1, 1.0};
    SUBCASE("two proposals on the same object") {
      const std::vector<OrientedBox> props = {chair, chair};
      const auto l = build_relation_label(props, std::vector<OrientedBox>{chair, desk});
      for (double v : l) CHECK(v == 0.0);
    }
    SUBCASE("proposals on two different objects at IoU 0.2") {
      // Shifting a box by x of its length along its axis gives IoU (1 - x) / (1 + x).
      const double shift = (1.0 - 0.2) / (1.0 + 0.2);
      OrientedBox p1 = chair, p2 = desk;
      p1.center[0] += shift * chair.size[0];
      p2.center[0] -= shift * desk.size[0];
      CHECK(geom::iou_3d(p1, chair) == doctest::Approx(0.2).epsilon(1e-12));
      CHECK(geom::iou_3d(p2, desk) == doctest::Approx(0.2).epsilon(1e-12));
      const std::vector<OrientedBox> props = {p1, p2};
      const auto l = build_relation_label(props, std::vector<OrientedBox>{chair, desk});
      CHECK(l[1] == 1.0);
      CHECK(l[2] == 1.0);
      CHECK(l[0] == 0.0);
    }
    SUBCASE("no ground truth") {
      const std::vector<OrientedBox> props = {chair, desk};
      for (double v : build_relation_label(props, std::vector<OrientedBox>{})) CHECK(v == 0.0);
    }
  }

  TEST_CASE("center-of-mass supervision") {
    CHECK(center_of_mass_loss(1.0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(std::abs(center_of_mass_loss(0.5) - 0.25 * std::log(2.0)) <= 1e-12);
    CHECK(std::abs(center_of_mass_loss(0.5) - 0.1733) <= 1e-4);
    const std::vector<double> none(9, 0.0);
    const double big = graph_supervision_loss(Tensor::zeros(3, 3), none).item();
    CHECK(std::isfinite(big));
    CHECK(big == doctest::Approx(-std::pow(1.0 - kMassClamp, 2) * std::log(kMassClamp)));
    // One labeled pair per row and a graph that puts all mass on it.
    const std::vector<double> label = {0, 1, 0, 0, 0, 1, 1, 0, 0};
    Tensor g = Tensor::from(3, 3, {-50, 50, -50, -50, -50, 50, 50, -50, -50});
    CHECK(graph_mass(g, label) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(graph_supervision_loss(g, label).item() <= 1e-12);
  }

  TEST_CASE("finite-difference check of graphs and the relation module") {
    for (const auto& r : gradcheck::run_suite("relation", 15)) {
      INFO(r.name);
      CHECK(r.passed);
    }
  }
}
