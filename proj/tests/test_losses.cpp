#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "cfnet/losses.hpp"
#include "cfnet/rng.hpp"

using namespace cfnet;

TEST_CASE("negative-fraction-linear loss") {
  SECTION("spot values, continuous branch") {
    CHECK(nfl(-1.0, -1.0) == Catch::Approx(1.0));
    CHECK(nfl(-2.0, -1.0) == Catch::Approx(0.5));
    CHECK(nfl(0.0, -1.0) == Catch::Approx(2.0));
  }
  SECTION("as-printed branch has the documented jump") {
    // Linear side at the knot is 0 while the fractional side is -1/x1 = 1.
    CHECK(nfl(-1.0, -1.0, NflVariant::kAsPrinted) == Catch::Approx(0.0));
    CHECK(nfl(-1.0 - 1e-12, -1.0, NflVariant::kAsPrinted) ==
          Catch::Approx(1.0));
  }
  SECTION("continuous variant is continuous and C1 at the knot") {
    const double x1 = -1.0;
    const double h = 1e-7;
    CHECK(std::abs(nfl(x1 + h, x1) - nfl(x1 - h, x1)) < 1e-6);
    const double right = (nfl(x1 + 2 * h, x1) - nfl(x1 + h, x1)) / h;
    const double left = (nfl(x1 - h, x1) - nfl(x1 - 2 * h, x1)) / h;
    CHECK(std::abs(right - left) < 1e-6);
    CHECK(nfl_grad(x1, x1) == Catch::Approx(1.0 / (x1 * x1)));
  }
  SECTION("monotone nondecreasing and strictly positive") {
    double prev = nfl(-50.0, -1.0);
    CHECK(prev > 0.0);
    for (double x = -49.9; x < 5.0; x += 0.1) {
      const double v = nfl(x, -1.0);
      CHECK(v > 0.0);
      CHECK(v >= prev);
      prev = v;
    }
  }
  SECTION("target domain: tiny loss forces deeply negative argument") {
    for (double x = -10.0; x < 5.0; x += 0.05)
      CHECK(nfl(x, -1.0) >= 1e-3);
    CHECK(nfl(-2000.0, -1.0) < 1e-3);
  }
}

TEST_CASE("exponential-linear loss") {
  SECTION("spot values at x2=0") {
    CHECK(el(0.0, 0.0) == Catch::Approx(1.0));
    CHECK(el(1.0, 0.0) == Catch::Approx(2.0));
    CHECK(el(-1.0, 0.0) == Catch::Approx(std::exp(-1.0)));
  }
  SECTION("continuous and C1 at the knot") {
    const double x2 = 0.0, h = 1e-7;
    CHECK(std::abs(el(x2 + h, x2) - el(x2 - h, x2)) < 1e-6);
    const double right = (el(x2 + 2 * h, x2) - el(x2 + h, x2)) / h;
    const double left = (el(x2 - h, x2) - el(x2 - 2 * h, x2)) / h;
    CHECK(std::abs(right - left) < 1e-6);
  }
  SECTION("monotone, positive, vanishing toward minus infinity") {
    double prev = el(-40.0, 0.0);
    for (double x = -39.9; x < 5.0; x += 0.1) {
      const double v = el(x, 0.0);
      CHECK(v > 0.0);
      CHECK(v >= prev);
      prev = v;
    }
    CHECK(el(-10.0, 0.0) < 1e-3);
  }
}

TEST_CASE("huber loss") {
  SECTION("spot values at x3=0.11") {
    CHECK(huber(0.0, 0.11) == 0.0);
    CHECK(huber(1.0, 0.11) == Catch::Approx(0.945));
    CHECK(huber(0.05, 0.11) == Catch::Approx(0.0025 / 0.22));
  }
  SECTION("even and uniquely minimized at zero") {
    for (double x = 0.01; x < 2.0; x += 0.07) {
      CHECK(huber(x, 0.11) == Catch::Approx(huber(-x, 0.11)));
      CHECK(huber(x, 0.11) > 0.0);
    }
  }
  SECTION("C1 at the knot") {
    const double x3 = 0.11, h = 1e-7;
    const double right = (huber(x3 + h, x3) - huber(x3, x3)) / h;
    const double left = (huber(x3, x3) - huber(x3 - h, x3)) / h;
    CHECK(std::abs(right - left) < 1e-6);
  }
}

TEST_CASE("scheme loss vectors") {
  LossHyper hyper;
  SECTION("scheme 2 branch evaluation") {
    TaskValues tv{-1.0, {-1.0}, {0.0}};
    const auto tl = scheme_losses(tv, LossScheme::kS2, hyper);
    CHECK(tl.l0 == Catch::Approx(std::exp(-1.0)));
    CHECK(tl.l1[0] == Catch::Approx(std::exp(-1.0)));
    CHECK(tl.l2[0] == 0.0);
  }
  SECTION("scheme 1 zero-policy values") {
    const double r_min = 0.02, p_max = 10.0;
    TaskValues tv{0.0, {r_min}, {-p_max}};
    const auto tl = scheme_losses(tv, LossScheme::kS1, hyper);
    CHECK(tl.l0 == Catch::Approx(2.0));
    CHECK(tl.l1[0] == Catch::Approx(r_min + 2.0));
    CHECK(tl.l2[0] == Catch::Approx(huber(-p_max, 0.11)));
  }
  SECTION("baseline 1 is the identity") {
    TaskValues tv{0.4, {-0.3, 0.1}, {2.0}};
    const auto tl = scheme_losses(tv, LossScheme::kB1, hyper);
    CHECK(tl.l0 == 0.4);
    CHECK(tl.l1[0] == -0.3);
    CHECK(tl.l1[1] == 0.1);
    CHECK(tl.l2[0] == 2.0);
  }
  SECTION("baseline 2 clamps near-zero denominators and counts it") {
    TaskValues tv{1e-15, {-1.0}, {0.0}};
    const auto tl = scheme_losses(tv, LossScheme::kB2, hyper);
    CHECK(tl.clamp_events == 1);
    CHECK(std::isfinite(tl.l0));
  }
}

TEST_CASE("joint weight-adaptive loss") {
  SECTION("unit weights average the losses") {
    TaskLossVector tl;
    tl.l0 = 0.5;
    tl.l1 = {0.5};
    tl.l2 = {0.5};
    CHECK(joint_loss(tl, {1.0, 1.0, 1.0}, 3) == Catch::Approx(0.5));
  }
  SECTION("all zero losses with unit weights vanish") {
    TaskLossVector tl;
    tl.l1 = {0.0};
    tl.l2 = {0.0};
    CHECK(joint_loss(tl, {1.0, 1.0, 1.0}, 3) == Catch::Approx(0.0));
  }
  SECTION("documented worked example") {
    TaskLossVector tl;
    tl.l0 = 1.2;
    tl.l1 = {0.0};
    tl.l2 = {0.0};
    CHECK(joint_loss(tl, {2.0, 1.0, 1.0}, 3) ==
          Catch::Approx(0.1 + std::log(2.0)));
  }
  SECTION("beta must be positive") {
    TaskLossVector tl;
    tl.l1 = {0.0};
    tl.l2 = {0.0};
    CHECK_THROWS_AS(joint_loss(tl, {1.0, 0.0, 1.0}, 3), std::domain_error);
  }
  SECTION("K must match the task partition") {
    TaskLossVector tl;
    tl.l1 = {0.0, 0.0};
    tl.l2 = {0.0};
    CHECK_THROWS_AS(joint_loss(tl, {1.0, 1.0, 1.0}, 3),
                    std::invalid_argument);
  }
  SECTION("unit-weight identity on nonnegative losses") {
    Rng rng(5);
    TaskLossVector tl;
    tl.l0 = rng.uniform();
    tl.l1 = {rng.uniform(), rng.uniform()};
    tl.l2 = {rng.uniform()};
    const double expect = (tl.l0 + tl.l1[0] + tl.l1[1] + tl.l2[0]) / 4.0;
    CHECK(joint_loss(tl, {1.0, 1.0, 1.0, 1.0}, 4) == Catch::Approx(expect));
  }
  SECTION("analytic gradients match finite differences") {
    TaskLossVector tl;
    tl.l0 = 0.7;
    tl.l1 = {0.3};
    tl.l2 = {-0.2};
    LossWeights beta = {0.8, 1.3, 0.6};
    const auto g = joint_loss_grads(tl, beta, 3);
    const double h = 1e-6;
    for (std::size_t k = 0; k < 3; ++k) {
      auto bp = beta, bm = beta;
      bp[k] += h;
      bm[k] -= h;
      const double fd =
          (joint_loss(tl, bp, 3) - joint_loss(tl, bm, 3)) / (2 * h);
      CHECK(g.d_beta[k] == Catch::Approx(fd).margin(1e-6));
    }
    CHECK(g.d_loss[0] == Catch::Approx(1.0 / (3 * 0.8 * 0.8)));
  }
}

TEST_CASE("mini-batch joint loss") {
  TaskLossVector a;
  a.l0 = 0.5;
  a.l1 = {0.5};
  a.l2 = {0.5};
  TaskLossVector b;
  b.l0 = 0.7;
  b.l1 = {0.7};
  b.l2 = {0.7};
  const LossWeights unit = {1.0, 1.0, 1.0};
  SECTION("single sample equals joint loss") {
    CHECK(minibatch_joint_loss({{a, unit}}, 3) ==
          Catch::Approx(joint_loss(a, unit, 3)));
  }
  SECTION("two identical samples keep the value") {
    CHECK(minibatch_joint_loss({{a, unit}, {a, unit}}, 3) ==
          Catch::Approx(joint_loss(a, unit, 3)));
  }
  SECTION("0.5 and 0.7 average to 0.6") {
    CHECK(minibatch_joint_loss({{a, unit}, {b, unit}}, 3) ==
          Catch::Approx(0.6));
  }
  SECTION("empty batch rejected") {
    CHECK_THROWS_AS(minibatch_joint_loss({}, 3), std::invalid_argument);
  }
}

TEST_CASE("symmetry constants over random probability vectors") {
  Rng rng(99);
  for (const std::size_t z : {std::size_t{2}, std::size_t{5}, std::size_t{10}}) {
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<double> u(z);
      double s = 0.0;
      for (auto& v : u) {
        v = rng.uniform() + 1e-6;
        s += v;
      }
      for (auto& v : u) v /= s;
      double el_sum = 0.0, nfl_sum = 0.0;
      for (double v : u) {
        el_sum += el(2.0 - 2.0 * v, 0.0);
        nfl_sum += nfl(2.0 - 2.0 * v, -1.0);
      }
      const double zd = static_cast<double>(z);
      CHECK(el_sum == Catch::Approx(3.0 * zd - 2.0).margin(1e-9));
      CHECK(nfl_sum == Catch::Approx(2.0 * zd - 2.0 + 2.0 * zd).margin(1e-9));
    }
  }
}
