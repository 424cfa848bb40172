#include <cmath>

#include "doctest.h"
#include "relgraph/autodiff.hpp"
#include "relgraph/gradcheck.hpp"
#include "relgraph/nn.hpp"

using namespace relgraph;
using ad::Tensor;

TEST_SUITE("autodiff") {
  TEST_CASE("matmul shapes") {
    const Tensor a = Tensor::full(2, 3, 1.0);
    const Tensor b = Tensor::full(3, 4, 2.0);
    const Tensor c = ad::matmul(a, b);
    CHECK(c.rows() == 2);
    CHECK(c.cols() == 4);
    for (double v : c.values()) CHECK(v == 6.0);
    CHECK_THROWS_AS(ad::matmul(b, b), std::invalid_argument);
  }

  TEST_CASE("softmax of equal logits is uniform") {
    const Tensor s = ad::softmax_rows(Tensor::from(1, 3, {0, 0, 0}));
    for (double v : s.values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  }

  TEST_CASE("softmax rows sum to one and stay positive") {
    Rng rng(3);
    std::vector<double> v(40);
    for (auto& x : v) x = 30.0 * normal(rng);
    const Tensor s = ad::softmax_rows(Tensor::from(4, 10, v));
    for (std::size_t r = 0; r < 4; ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < 10; ++c) {
        CHECK(s(r, c) > 0.0);
        sum += s(r, c);
      }
      CHECK(std::abs(sum - 1.0) <= 1e-9);
    }
  }

  TEST_CASE("relu") {
    const Tensor r = ad::relu(Tensor::from(1, 2, {-1, 2}));
    CHECK(r(0, 0) == 0.0);
    CHECK(r(0, 1) == 2.0);
  }

  TEST_CASE("d/dx x*x at 3 is 6") {
    Tensor x = Tensor::param(1, 1, {3.0});
    ad::mul(x, x).backward();
    CHECK(x.grad()[0] == 6.0);
  }

  TEST_CASE("gradient of a constant with respect to a weight is zero") {
    Tensor w = Tensor::param(1, 1, {2.0});
    ad::add(ad::scale(w, 0.0), Tensor::scalar(5.0)).backward();
    CHECK(w.grad()[0] == 0.0);
  }

  TEST_CASE("gradients accumulate until zeroed") {
    nn::ParamStore store;
    Tensor w = store.add("w", 1, 1, {1.5});
    ad::scale(w, 2.0).backward();
    ad::scale(w, 2.0).backward();
    CHECK(w.grad()[0] == 4.0);
    store.zero_grad();
    CHECK(w.grad()[0] == 0.0);
  }

  TEST_CASE("forward is pure") {
    nn::ParamStore s1, s2;
    Rng r1(9), r2(9);
    nn::Mlp m1(s1, "m", 4, {8, 3}, r1, true), m2(s2, "m", 4, {8, 3}, r2, true);
    std::vector<double> v(20);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::sin(static_cast<double>(i));
    const Tensor y = Tensor::from(5, 4, v);
    const Tensor ya = m1(y), yb = m2(y);
    const auto a = ya.values();
    const auto b = yb.values();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  }

  TEST_CASE("checked mode names the failing op") {
    const bool was = ad::checked();
    ad::set_checked(true);
    CHECK_THROWS_AS(ad::log(Tensor::from(1, 1, {-1.0})), ad::NonFiniteError);
    ad::set_checked(was);
  }

  TEST_CASE("relative error floor") {
    CHECK(gradcheck::relative_error(1.0, 1.0, 1e-3) == 0.0);
    CHECK(gradcheck::relative_error(1e-6, 0.0, 1e-3) == doctest::Approx(1e-3));
    CHECK(gradcheck::relative_error(2.0, 1.0, 1e-3) == doctest::Approx(0.5));
  }

  TEST_CASE("finite-difference check of elementwise, reduction and structural ops") {
    for (const auto& r : gradcheck::run_suite("autodiff", 5)) {
      INFO(r.name);
      CHECK(r.passed);
      CHECK(r.probes >= 100);
    }
  }
}

TEST_SUITE("autodiff") {
  TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    nn::ParamStore store;
    Tensor w = store.add("w", 1, 2, {0.5, -1.0});
    nn::OptimState st;
    nn::AdamConfig cfg;
    store.zero_grad();
    nn::adam_step(store, st, cfg, 0);
    CHECK(w.values()[0] == 0.5);
    CHECK(w.values()[1] == -1.0);
    CHECK(st.step == 1);
  }

  TEST_CASE("adam: one step with unit gradient moves by the learning rate") {
    nn::ParamStore store;
    Tensor w = store.add("w", 1, 1, {0.0});
    nn::OptimState st;
    nn::AdamConfig cfg;
    cfg.learning_rate = 1e-3;
    store.zero_grad();
    w.mutable_grad()[0] = 1.0;
    nn::adam_step(store, st, cfg, 0);
    // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
    CHECK(w.values()[0] == doctest::Approx(-1e-3 / (1.0 + 1e-8)).epsilon(1e-12));
  }

  TEST_CASE("step schedule") {
    nn::AdamConfig cfg;
    cfg.learning_rate = 1e-3;
    cfg.schedule = {{100, 0.1}};
    CHECK(nn::scheduled_learning_rate(cfg, 99) == doctest::Approx(1e-3));
    CHECK(nn::scheduled_learning_rate(cfg, 100) == doctest::Approx(1e-4));
  }

  TEST_CASE("checkpoint round trip is exact") {
    nn::ParamStore a, b;
    Rng r1(4), r2(5);
    nn::Mlp m1(a, "m", 3, {4, 2}, r1, true);
    nn::Mlp m2(b, "m", 3, {4, 2}, r2, true);
    nn::OptimState s1, s2;
    s1.step = 17;
    const std::string first = a.names().front();
    std::vector<double> moment(a.get(first).size(), std::nextafter(0.2, 1.0));
    s1.first_moment[first] = moment;
    s1.second_moment[first] = moment;
    nn::checkpoint_from_json(nn::checkpoint_to_json(a, s1, {{"k", 1}}), b, s2);
    for (const auto& name : a.names()) {
      const auto va = a.get(name).values();
      const auto vb = b.get(name).values();
      for (std::size_t i = 0; i < va.size(); ++i) CHECK(va[i] == vb[i]);
    }
    CHECK(s2.step == 17);
    CHECK(s2.first_moment == s1.first_moment);
  }

  TEST_CASE("checkpoint without a format version is rejected") {
    nn::ParamStore a;
    nn::OptimState s;
    auto doc = nn::checkpoint_to_json(a, s, {});
    doc.erase("format_version");
    CHECK_THROWS(nn::checkpoint_from_json(doc, a, s));
  }

  TEST_CASE("scene norm standardizes each feature over the rows") {
    nn::ParamStore store;
    nn::SceneNorm norm(store, "n", 2);
    const Tensor y = norm(Tensor::from(4, 2, {1, 10, 2, 20, 3, 30, 4, 40}));
    for (std::size_t c = 0; c < 2; ++c) {
      double mean = 0.0, var = 0.0;
      for (std::size_t r = 0; r < 4; ++r) mean += y(r, c) / 4.0;
      for (std::size_t r = 0; r < 4; ++r) var += (y(r, c) - mean) * (y(r, c) - mean) / 4.0;
      CHECK(std::abs(mean) < 1e-12);
      CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
    }
  }

  TEST_CASE("finite-difference check of layers") {
    for (const auto& r : gradcheck::run_suite("nn", 6)) {
      INFO(r.name);
      CHECK(r.passed);
    }
  }
}
