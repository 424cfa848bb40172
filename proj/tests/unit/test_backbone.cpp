#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "doctest.h"
#include "relgraph/backbone.hpp"
#include "relgraph/gradcheck.hpp"

using namespace relgraph;
using namespace relgraph::backbone;

namespace {

double dist(const Vec3& a, const Vec3& b) {
  return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]));
}

double min_pairwise(const std::vector<Vec3>& pts, const std::vector<std::size_t>& idx) {
  double best = 1e300;
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = i + 1; j < idx.size(); ++j) best = std::min(best, dist(pts[idx[i]], pts[idx[j]]));
  return best;
}

std::vector<Vec3> uniform_cube(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Vec3> p(n);
  for (auto& x : p) x = {uniform01(rng), uniform01(rng), uniform01(rng)};
  return p;
}

}  // namespace

TEST_SUITE("backbone") {
  TEST_CASE("fps with k = N returns every index") {
    const auto pts = uniform_cube(50, 1);
    auto idx = farthest_point_sample(pts, 50, 7);
    std::sort(idx.begin(), idx.end());
    std::vector<std::size_t> all(50);
    std::iota(all.begin(), all.end(), 0);
    CHECK(idx == all);
  }

  TEST_CASE("fps on unit-square corners picks the diagonal") {
    const std::vector<Vec3> sq = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 0}};
    const auto idx = farthest_point_sample_from(sq, 2, 0);
    REQUIRE(idx.size() == 2);
    CHECK(idx[0] == 0);
    CHECK(idx[1] == 3);
  }

  TEST_CASE("fps spreads points better than random subsets") {
    const auto pts = uniform_cube(1000, 2);
    const double fps = min_pairwise(pts, farthest_point_sample(pts, 64, 3));
    Rng rng(4);
    std::vector<double> random;
    for (int t = 0; t < 100; ++t) {
      std::vector<std::size_t> all(1000);
      std::iota(all.begin(), all.end(), 0);
      for (std::size_t i = 0; i < 64; ++i) std::swap(all[i], all[i + uniform_index(rng, 1000 - i)]);
      all.resize(64);
      random.push_back(min_pairwise(pts, all));
    }
    std::nth_element(random.begin(), random.begin() + 50, random.end());
    CHECK(fps >= random[50]);
  }

  TEST_CASE("fps is deterministic in its seed") {
    const auto pts = uniform_cube(300, 5);
    CHECK(farthest_point_sample(pts, 32, 11) == farthest_point_sample(pts, 32, 11));
  }

  TEST_CASE("ball query on an isolated point repeats it") {
    const std::vector<Vec3> pts = {{0, 0, 0}, {5, 5, 5}, {9, 9, 9}};
    const auto idx = ball_query(pts, {5, 5, 5}, 0.01, 4);
    CHECK(idx == std::vector<std::size_t>{1, 1, 1, 1});
  }

  TEST_CASE("ball query with a huge radius takes the first points in scan order") {
    const auto pts = uniform_cube(20, 6);
    const auto idx = ball_query(pts, {0.5, 0.5, 0.5}, 100.0, 8);
    CHECK(idx == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7});
  }

  TEST_CASE("ball query on a grid matches a brute-force scan") {
    std::vector<Vec3> grid;
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j)
        for (int k = 0; k < 6; ++k) grid.push_back({0.1 * i, 0.1 * j, 0.1 * k});
    const Vec3 c = grid[2 * 36 + 3 * 6 + 2];
    std::set<std::size_t> expect;
    for (std::size_t i = 0; i < grid.size(); ++i)
      if (dist(grid[i], c) <= 0.15) expect.insert(i);
    const auto got = ball_query(grid, c, 0.15, 64);
    CHECK(std::set<std::size_t>(got.begin(), got.end()) == expect);
  }

  TEST_CASE("three-nn interpolation") {
    const std::vector<Vec3> coarse = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {2, 2, 2}};
    SUBCASE("coincident point takes the coarse feature") {
      const auto w = three_nn_weights(coarse, std::vector<Vec3>{{1, 0, 0}});
      const Tensor f = Tensor::from(5, 1, {10, 20, 30, 40, 50});
      const Tensor out = ad::interpolate_rows(f, w.index, w.weight, w.k);
      CHECK(out(0, 0) == doctest::Approx(20.0).epsilon(1e-6));
    }
    SUBCASE("constant features stay constant") {
      const auto fine = uniform_cube(10, 8);
      const auto w = three_nn_weights(coarse, fine);
      const Tensor out = ad::interpolate_rows(Tensor::full(5, 2, 3.5), w.index, w.weight, w.k);
      for (double v : out.values()) CHECK(v == doctest::Approx(3.5).epsilon(1e-12));
    }
    SUBCASE("random instance against brute force") {
      const auto c8 = uniform_cube(8, 9);
      const auto fine = uniform_cube(5, 10);
      std::vector<double> fv(8);
      for (std::size_t i = 0; i < 8; ++i) fv[i] = std::cos(static_cast<double>(i));
      const auto w = three_nn_weights(c8, fine);
      const Tensor out = ad::interpolate_rows(Tensor::from(8, 1, fv), w.index, w.weight, w.k);
      for (std::size_t f = 0; f < fine.size(); ++f) {
        std::vector<std::size_t> order(8);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(),
                  [&](std::size_t a, std::size_t b) { return dist(c8[a], fine[f]) < dist(c8[b], fine[f]); });
        double num = 0.0, den = 0.0;
        for (int k = 0; k < 3; ++k) {
          const double wk = 1.0 / (dist(c8[order[k]], fine[f]) + 1e-8);
          num += wk * fv[order[k]];
          den += wk;
        }
        CHECK(std::abs(out(f, 0) - num / den) <= 1e-9);
      }
    }
  }

  TEST_CASE("plan follows the configured subsampling schedule") {
    BackboneConfig cfg;
    cfg.num_points = 2048;
    cfg.sa = {{512, 0.2, 16, {8}}, {256, 0.4, 16, {8}}, {128, 0.8, 16, {8}}, {64, 1.2, 16, {8}}};
    cfg.fp = {{8}, {8}};
    PointCloud cloud;
    cloud.coords = uniform_cube(2048, 11);
    const auto plan = plan_backbone(cloud, cfg, 1);
    REQUIRE(plan.levels.size() == 4);
    CHECK(plan.levels[0].coords.size() == 512);
    CHECK(plan.levels[1].coords.size() == 256);
    CHECK(plan.levels[2].coords.size() == 128);
    CHECK(plan.levels[3].coords.size() == 64);
    CHECK(cfg.seed_count() == 256);

    nn::ParamStore store;
    Rng rng(2);
    Backbone net(store, "b", cfg, rng);
    const SeedSet seeds = net(plan);
    CHECK(seeds.coords.size() == 256);
    CHECK(seeds.features.rows() == 256);
    CHECK(seeds.features.cols() == cfg.seed_dim());
  }

  TEST_CASE("paper schedule counts") {
    BackboneConfig cfg;
    cfg.sa = {{2048, 0.2, 64, {8}}, {1024, 0.4, 32, {8}}, {512, 0.8, 16, {8}}, {256, 1.2, 16, {8}}};
    cfg.fp = {{8}, {8}};
    CHECK(cfg.seed_count() == 1024);
    CHECK(cfg.sa[3].centers == 256);
  }

  TEST_CASE("identical groups give identical SA features") {
    BackbonePlan::Level level;
    const std::size_t centers = 4, group = 3;
    level.coords.assign(centers, {0, 0, 0});
    level.center_index = {0, 1, 2, 3};
    for (std::size_t c = 0; c < centers; ++c)
      for (std::size_t g = 0; g < group; ++g) level.group_index.push_back(g);
    for (std::size_t c = 0; c < centers; ++c)
      for (std::size_t g = 0; g < group; ++g)
        for (int d = 0; d < 3; ++d) level.canonical.push_back(0.1 * static_cast<double>(g + d));
    nn::ParamStore store;
    Rng rng(3);
    SetAbstraction sa(store, "sa", 2, {centers, 100.0, group, {4, 5}}, rng);
    const Tensor feats = Tensor::from(3, 2, {1, 2, 3, 4, 5, 6});
    const Tensor out = sa(level, feats);
    for (std::size_t c = 1; c < centers; ++c)
      for (std::size_t j = 0; j < out.cols(); ++j) CHECK(out(c, j) == out(0, j));
  }

  TEST_CASE("empty or non-finite clouds are rejected") {
    PointCloud empty;
    CHECK_THROWS_AS(validate(empty), std::invalid_argument);
    PointCloud bad;
    bad.coords = {{0, 0, std::nan("")}};
    CHECK_THROWS_AS(validate(bad), std::invalid_argument);
  }

  TEST_CASE("finite-difference check of SA, FP and the full backbone") {
    for (const auto& r : gradcheck::run_suite("backbone", 12)) {
      INFO(r.name);
      CHECK(r.passed);
    }
  }
}
