#include <catch2/catch_amalgamated.hpp>

#include <complex>

#include "cfnet/linalg.hpp"
#include "cfnet/rng.hpp"

using cfnet::CMatrix;
using cfnet::cplx;

namespace {

CMatrix random_matrix(std::size_t r, std::size_t c, cfnet::Rng& rng) {
  CMatrix m(r, c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j)
      m(i, j) = {rng.normal(), rng.normal()};
  return m;
}

CMatrix hpd_from(const CMatrix& b) {
  CMatrix a = cfnet::matmul(cfnet::hermitian(b), b);
  for (std::size_t i = 0; i < a.rows(); ++i) a(i, i) += 1.0;
  return a;
}

}  // namespace

TEST_CASE("hermitian transpose") {
  SECTION("identity maps to itself") {
    const auto h = cfnet::hermitian(CMatrix::identity(2));
    CHECK(h(0, 0) == cplx{1.0, 0.0});
    CHECK(h(0, 1) == cplx{0.0, 0.0});
    CHECK(h(1, 1) == cplx{1.0, 0.0});
  }
  SECTION("imaginary entries conjugate") {
    CMatrix m(2, 2);
    m(0, 0) = {0.0, 1.0};
    const auto h = cfnet::hermitian(m);
    CHECK(h(0, 0) == cplx{0.0, -1.0});
    CHECK(h(1, 1) == cplx{0.0, 0.0});
  }
  SECTION("real symmetric is a fixed point") {
    CMatrix m(2, 2);
    m(0, 0) = 1.0;
    m(0, 1) = 2.0;
    m(1, 0) = 2.0;
    m(1, 1) = 3.0;
    const auto h = cfnet::hermitian(m);
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 2; ++j) CHECK(h(i, j) == m(i, j));
  }
  SECTION("involution: (A^H)^H = A") {
    cfnet::Rng rng(3);
    const auto a = random_matrix(3, 2, rng);
    const auto back = cfnet::hermitian(cfnet::hermitian(a));
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 2; ++j)
        CHECK(std::abs(back(i, j) - a(i, j)) == 0.0);
  }
}

TEST_CASE("matmul") {
  SECTION("A * I = A") {
    cfnet::Rng rng(1);
    const auto a = random_matrix(3, 3, rng);
    const auto p = cfnet::matmul(a, CMatrix::identity(3));
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) CHECK(p(i, j) == a(i, j));
  }
  SECTION("conjugate pair [[1+i]][[1-i]] = [[2]]") {
    CMatrix a(1, 1), b(1, 1);
    a(0, 0) = {1.0, 1.0};
    b(0, 0) = {1.0, -1.0};
    const auto p = cfnet::matmul(a, b);
    CHECK(p(0, 0).real() == Catch::Approx(2.0));
    CHECK(p(0, 0).imag() == Catch::Approx(0.0));
  }
  SECTION("matches the triple-loop oracle") {
    cfnet::Rng rng(7);
    const auto a = random_matrix(3, 2, rng);
    const auto b = random_matrix(2, 4, rng);
    const auto p = cfnet::matmul(a, b);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 4; ++j) {
        cplx s{0.0, 0.0};
        for (std::size_t k = 0; k < 2; ++k) s += a(i, k) * b(k, j);
        CHECK(std::abs(p(i, j) - s) < 1e-14);
      }
  }
  SECTION("inner dimension mismatch throws") {
    CHECK_THROWS_AS(cfnet::matmul(CMatrix(2, 3), CMatrix(2, 3)),
                    cfnet::ShapeError);
  }
}

TEST_CASE("inverse of HPD matrices") {
  SECTION("identity") {
    const auto inv = cfnet::inverse_hpd(CMatrix::identity(3));
    CHECK((inv - CMatrix::identity(3)).max_abs() < 1e-14);
  }
  SECTION("diagonal") {
    CMatrix d(2, 2);
    d(0, 0) = 2.0;
    d(1, 1) = 4.0;
    const auto inv = cfnet::inverse_hpd(d);
    CHECK(inv(0, 0).real() == Catch::Approx(0.5));
    CHECK(inv(1, 1).real() == Catch::Approx(0.25));
    CHECK(std::abs(inv(0, 1)) < 1e-15);
  }
  SECTION("residual A A^-1 = I") {
    cfnet::Rng rng(11);
    const auto a = hpd_from(random_matrix(3, 3, rng));
    const auto res = cfnet::matmul(a, cfnet::inverse_hpd(a));
    CHECK((res - CMatrix::identity(3)).max_abs() < 1e-8);
  }
  SECTION("non-positive-definite input throws") {
    CMatrix m(2, 2);
    m(0, 0) = -1.0;
    m(1, 1) = 1.0;
    CHECK_THROWS_AS(cfnet::inverse_hpd(m), cfnet::DefinitenessError);
  }
}

TEST_CASE("log-determinant of HPD matrices") {
  SECTION("identity gives zero") {
    CHECK(cfnet::logdet_hpd(CMatrix::identity(4)) == Catch::Approx(0.0));
  }
  SECTION("diag(2,2) gives 2 ln 2") {
    CMatrix d(2, 2);
    d(0, 0) = 2.0;
    d(1, 1) = 2.0;
    CHECK(cfnet::logdet_hpd(d) == Catch::Approx(2.0 * std::log(2.0)));
  }
  SECTION("matches 2x2 cofactor determinant") {
    cfnet::Rng rng(5);
    const auto a = hpd_from(random_matrix(2, 2, rng));
    const cplx det = a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0);
    CHECK(cfnet::logdet_hpd(a) ==
          Catch::Approx(std::log(det.real())).epsilon(1e-10));
  }
  SECTION("shared factorization agrees with the separate kernels") {
    cfnet::Rng rng(9);
    const auto a = hpd_from(random_matrix(3, 3, rng));
    const auto f = cfnet::factorize_hpd(a);
    CHECK(f.logdet == cfnet::logdet_hpd(a));
    CHECK((f.inverse - cfnet::inverse_hpd(a)).max_abs() == 0.0);
  }
}

TEST_CASE("block-diagonal gate expansion") {
  SECTION("v=[1,0], mt=2 gives diag(1,1,0,0)") {
    const auto m = cfnet::block_diag_expand({1.0, 0.0}, 2);
    REQUIRE(m.rows() == 4);
    CHECK(m(0, 0) == cplx{1.0, 0.0});
    CHECK(m(1, 1) == cplx{1.0, 0.0});
    CHECK(m(2, 2) == cplx{0.0, 0.0});
    CHECK(m(3, 3) == cplx{0.0, 0.0});
  }
  SECTION("all-zero gate annihilates") {
    const auto m = cfnet::block_diag_expand({0.0, 0.0, 0.0}, 2);
    CHECK(m.max_abs() == 0.0);
  }
  SECTION("all-one gate with mt=1 is the identity") {
    const auto m = cfnet::block_diag_expand({1.0, 1.0, 1.0}, 1);
    CHECK((m - CMatrix::identity(3)).max_abs() == 0.0);
  }
}
