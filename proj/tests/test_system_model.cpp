#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "cfnet/rng.hpp"
#include "cfnet/system_model.hpp"

using namespace cfnet;

namespace {

ChannelSample unit_sample(const ChannelDims& dims, std::uint64_t seed) {
  ChannelSample s;
  s.dims = dims;
  s.coefficients.resize(dims.entries());
  Rng rng(seed);
  for (auto& c : s.coefficients)
    c = {rng.normal() * 0.7071067811865475,
         rng.normal() * 0.7071067811865475};
  return s;
}

// Scalar setup: B=1, N=1, M_t=1, M_r=1.
struct ScalarCase {
  SystemConfig cfg;
  ChannelSample h;
  AllocationDecision y;

  explicit ScalarCase(std::uint32_t users) {
    cfg.b = 1;
    cfg.n = 1;
    cfg.i = users;
    cfg.mt = 1;
    cfg.mr = 1;
    cfg.sigma2 = 1.0;
    cfg.p_max = 1.0;
    h.dims = cfg.dims();
    h.coefficients.assign(h.dims.entries(), {1.0, 0.0});
    y = AllocationDecision::zeros(cfg.dims());
  }
};

}  // namespace

TEST_CASE("power unit conversions") {
  CHECK(dbm_to_watts(40.0) == Catch::Approx(10.0));
  CHECK(dbm_to_watts(-26.0) == Catch::Approx(2.51188643150958e-6));
  CHECK(watts_to_dbm(dbm_to_watts(13.7)) == Catch::Approx(13.7));
}

TEST_CASE("signal covariance") {
  SECTION("zero beamformer annihilates") {
    ScalarCase c(1);
    c.y.v[0] = 1.0;
    CHECK(signal_cov(c.h, c.y, 0, 0).max_abs() == 0.0);
  }
  SECTION("zero subcarrier gate annihilates") {
    ScalarCase c(1);
    c.y.w[0] = 1.0;
    CHECK(signal_cov(c.h, c.y, 0, 0).max_abs() == 0.0);
  }
  SECTION("scalar case h=w=v=1 gives [[1]]") {
    ScalarCase c(1);
    c.y.w[0] = 1.0;
    c.y.v[0] = 1.0;
    const auto s = signal_cov(c.h, c.y, 0, 0);
    CHECK(s(0, 0).real() == Catch::Approx(1.0));
  }
}

TEST_CASE("interference covariance") {
  SECTION("single user leaves only noise") {
    ScalarCase c(1);
    c.y.w[0] = 1.0;
    c.y.v[0] = 1.0;
    const auto a = interference_cov(c.h, c.y, 0, 0, c.cfg.sigma2);
    CHECK(a(0, 0).real() == Catch::Approx(1.0));
  }
  SECTION("all-zero beamformers leave only noise") {
    ScalarCase c(3);
    const auto a = interference_cov(c.h, c.y, 0, 0, 2.5);
    CHECK(a(0, 0).real() == Catch::Approx(2.5));
  }
  SECTION("two scalar users, unit interferer gives [[2]]") {
    ScalarCase c(2);
    c.y.w[c.y.w_index(0, 0, 1, 0)] = 1.0;
    c.y.v[c.y.v_index(0, 0, 1)] = 1.0;
    const auto a = interference_cov(c.h, c.y, 0, 0, 1.0);
    CHECK(a(0, 0).real() == Catch::Approx(2.0));
  }
}

TEST_CASE("user rate") {
  SECTION("zero beamformers give zero rate") {
    ScalarCase c(2);
    CHECK(user_rate(c.h, c.y, 0, c.cfg.sigma2) == Catch::Approx(0.0));
  }
  SECTION("scalar SINR=1 gives one bit") {
    ScalarCase c(1);
    c.y.w[0] = 1.0;
    c.y.v[0] = 1.0;
    CHECK(user_rate(c.h, c.y, 0, 1.0) == Catch::Approx(1.0));
  }
  SECTION("M_r=1 matches the scalar SINR oracle") {
    SystemConfig cfg;
    cfg.b = 2;
    cfg.n = 2;
    cfg.i = 2;
    cfg.mt = 2;
    cfg.mr = 1;
    cfg.sigma2 = 0.7;
    const auto dims = cfg.dims();
    for (std::uint64_t trial = 0; trial < 20; ++trial) {
      const auto h = unit_sample(dims, 100 + trial);
      auto y = AllocationDecision::zeros(dims);
      Rng rng(200 + trial);
      for (auto& w : y.w) w = {rng.normal(), rng.normal()};
      for (auto& v : y.v) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
      for (std::size_t i = 0; i < cfg.i; ++i) {
        double oracle = 0.0;
        for (std::size_t n = 0; n < cfg.n; ++n) {
          auto gain = [&](std::size_t j) {
            std::complex<double> acc{0.0, 0.0};
            for (std::size_t b = 0; b < cfg.b; ++b)
              for (std::size_t t = 0; t < cfg.mt; ++t)
                acc += std::conj(h.at(b, n, i, t, 0)) *
                       (y.v[y.v_index(b, n, j)] * y.w[y.w_index(b, n, j, t)]);
            return std::norm(acc);
          };
          double interf = 0.0;
          for (std::size_t j = 0; j < cfg.i; ++j)
            if (j != i) interf += gain(j);
          oracle += std::log2(1.0 + gain(i) / (interf + cfg.sigma2));
        }
        CHECK(user_rate(h, y, i, cfg.sigma2) ==
              Catch::Approx(oracle).margin(1e-10));
      }
    }
  }
}

TEST_CASE("transmit power") {
  ScalarCase c(2);
  SECTION("zero beamformers") {
    CHECK(transmit_power(c.y, 0) == 0.0);
  }
  SECTION("single active term of squared norm 2") {
    SystemConfig cfg;
    cfg.b = 1;
    cfg.n = 1;
    cfg.i = 1;
    cfg.mt = 2;
    cfg.mr = 1;
    auto y = AllocationDecision::zeros(cfg.dims());
    y.w[0] = {1.0, 0.0};
    y.w[1] = {0.0, 1.0};
    y.v[0] = 1.0;
    CHECK(transmit_power(y, 0) == Catch::Approx(2.0));
  }
  SECTION("gate zero suppresses arbitrary w") {
    c.y.w[0] = {3.0, 4.0};
    CHECK(transmit_power(c.y, 0) == 0.0);
  }
}

TEST_CASE("task values") {
  SECTION("zero policy") {
    SystemConfig cfg;
    cfg.b = 2;
    cfg.n = 2;
    cfg.i = 3;
    cfg.mt = 2;
    cfg.mr = 2;
    const auto h = unit_sample(cfg.dims(), 42);
    const auto y = AllocationDecision::zeros(cfg.dims());
    const auto tv = task_values(h, y, cfg);
    CHECK(tv.f == 0.0);
    for (double g : tv.g) CHECK(g == Catch::Approx(cfg.r_min));
    for (double l : tv.l) CHECK(l == Catch::Approx(-cfg.p_max));
  }
  SECTION("scalar one-user case gives f = -1") {
    ScalarCase c(1);
    c.y.w[0] = 1.0;
    c.y.v[0] = 1.0;
    CHECK(task_values(c.h, c.y, c.cfg).f == Catch::Approx(-1.0));
  }
  SECTION("f recomputes as minus the weighted rate sum") {
    SystemConfig cfg;
    cfg.b = 2;
    cfg.n = 2;
    cfg.i = 3;
    cfg.mt = 2;
    cfg.mr = 2;
    cfg.alpha = {0.5, 1.0, 2.0};
    const auto h = unit_sample(cfg.dims(), 77);
    auto y = AllocationDecision::zeros(cfg.dims());
    Rng rng(78);
    for (auto& w : y.w) w = {0.3 * rng.normal(), 0.3 * rng.normal()};
    for (auto& v : y.v) v = 1.0;
    const auto tv = task_values(h, y, cfg);
    double expect = 0.0;
    for (std::size_t i = 0; i < cfg.i; ++i)
      expect -= cfg.alpha[i] * user_rate(h, y, i, cfg.sigma2);
    CHECK(tv.f == Catch::Approx(expect).epsilon(1e-12));
  }
}
