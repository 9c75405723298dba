#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "cfnet/autodiff.hpp"
#include "cfnet/rng.hpp"

using namespace cfnet;
using ad::Tape;
using ad::Tensor;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double s = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = s * rng.normal();
  return t;
}

}  // namespace

TEST_CASE("elementwise primitives") {
  SECTION("relu forward") {
    Tape tape;
    auto x = tape.leaf(Tensor({1, 3}, {-1.0, 0.0, 2.5}));
    auto y = tape.relu(x);
    CHECK(tape.value(y).data == std::vector<double>{0.0, 0.0, 2.5});
  }
  SECTION("sigmoid forward") {
    Tape tape;
    auto x = tape.leaf(Tensor({1, 2}, {0.0, 1000.0}));
    auto y = tape.sigmoid(x);
    CHECK(tape.value(y).data[0] == Catch::Approx(0.5));
    CHECK(tape.value(y).data[1] == Catch::Approx(1.0));
  }
  SECTION("d(x*x)/dx = 2x") {
    Tape tape;
    auto x = tape.leaf(Tensor::scalar(3.0));
    auto y = tape.mul(x, x);
    tape.backward(y);
    CHECK(tape.grad(x).data[0] == Catch::Approx(6.0));
  }
  SECTION("sigmoid-sum gradient at zero input is 0.25") {
    Tape tape;
    auto x = tape.leaf(Tensor({1, 4}, {0.0, 0.0, 0.0, 0.0}));
    auto s = tape.sum(tape.sigmoid(x));
    tape.backward(s);
    for (double g : tape.grad(x).data) CHECK(g == Catch::Approx(0.25));
  }
  SECTION("adjoints are linear in the seed") {
    Rng rng(21);
    Tensor xv = random_tensor({2, 3}, rng);
    auto run = [&](double seed_scale) {
      Tape tape;
      auto x = tape.leaf(xv);
      auto y = tape.sigmoid(x);
      Tensor seed(tape.value(y).shape);
      for (auto& v : seed.data) v = seed_scale;
      tape.backward_with(y, std::move(seed));
      return tape.grad(x);
    };
    const auto g1 = run(1.0);
    const auto g3 = run(3.0);
    for (std::size_t k = 0; k < g1.data.size(); ++k)
      CHECK(g3.data[k] == Catch::Approx(3.0 * g1.data[k]).margin(1e-10));
  }
}

TEST_CASE("affine layer gradients match finite differences") {
  Rng rng(31);
  Tensor xv = random_tensor({3, 4}, rng);
  Tensor wv = random_tensor({4, 2}, rng);
  Tensor bv = random_tensor({2}, rng);
  auto loss = [&](const Tensor& x, const Tensor& w, const Tensor& b) {
    Tape tape;
    auto y = tape.sum(tape.sigmoid(tape.affine(
        tape.leaf(x), tape.leaf(w), tape.leaf(b))));
    return tape.value(y).data[0];
  };
  Tape tape;
  auto x = tape.leaf(xv);
  auto w = tape.leaf(wv);
  auto b = tape.leaf(bv);
  auto l = tape.sum(tape.sigmoid(tape.affine(x, w, b)));
  tape.backward(l);
  const double h = 1e-6;
  auto fd_check = [&](Tensor& host, Tape::Var var) {
    for (std::size_t k = 0; k < host.data.size(); ++k) {
      const double orig = host.data[k];
      host.data[k] = orig + h;
      const double up = loss(xv, wv, bv);
      host.data[k] = orig - h;
      const double dn = loss(xv, wv, bv);
      host.data[k] = orig;
      CHECK(tape.grad(var).data[k] ==
            Catch::Approx((up - dn) / (2 * h)).margin(1e-6));
    }
  };
  fd_check(xv, x);
  fd_check(wv, w);
  fd_check(bv, b);
}

TEST_CASE("batch normalization") {
  SECTION("constant batch maps to the shift parameter") {
    Tape tape;
    ad::BatchNormRunningStats stats(2);
    auto x = tape.leaf(Tensor({3, 2}, {5.0, -1.0, 5.0, -1.0, 5.0, -1.0}));
    auto gamma = tape.leaf(Tensor({2}, {2.0, 2.0}));
    auto beta = tape.leaf(Tensor({2}, {0.3, -0.7}));
    auto y = tape.batchnorm(x, gamma, beta, stats, true);
    // Zero batch variance: normalized input is 0, output is beta.
    for (std::size_t r = 0; r < 3; ++r) {
      CHECK(tape.value(y).data[r * 2] == Catch::Approx(0.3));
      CHECK(tape.value(y).data[r * 2 + 1] == Catch::Approx(-0.7));
    }
  }
  SECTION("train-mode batch of one falls back to running stats") {
    Tape tape;
    ad::BatchNormRunningStats stats(1);
    auto x = tape.leaf(Tensor({1, 1}, {2.0}));
    auto gamma = tape.leaf(Tensor({1}, {1.0}));
    auto beta = tape.leaf(Tensor({1}, {0.0}));
    auto y = tape.batchnorm(x, gamma, beta, stats, true);
    CHECK(tape.batch1_fallbacks() == 1);
    // Fresh stats: mean 0, var 1.
    CHECK(tape.value(y).data[0] ==
          Catch::Approx(2.0 / std::sqrt(1.0 + stats.epsilon)));
  }
  SECTION("gradients match finite differences in train mode") {
    Rng rng(41);
    Tensor xv = random_tensor({4, 3}, rng);
    Tensor gv = random_tensor({3}, rng, 0.5);
    for (auto& v : gv.data) v += 1.5;
    Tensor bv = random_tensor({3}, rng, 0.5);
    auto loss = [&](const Tensor& x, const Tensor& g, const Tensor& b) {
      Tape tape;
      ad::BatchNormRunningStats stats(3);
      auto y = tape.batchnorm(tape.leaf(x), tape.leaf(g), tape.leaf(b),
                              stats, true);
      auto l = tape.sum(tape.sigmoid(y));
      return tape.value(l).data[0];
    };
    Tape tape;
    ad::BatchNormRunningStats stats(3);
    auto x = tape.leaf(xv);
    auto g = tape.leaf(gv);
    auto b = tape.leaf(bv);
    auto l = tape.sum(tape.sigmoid(tape.batchnorm(x, g, b, stats, true)));
    tape.backward(l);
    const double h = 1e-6;
    auto fd_check = [&](Tensor& host, Tape::Var var) {
      for (std::size_t k = 0; k < host.data.size(); ++k) {
        const double orig = host.data[k];
        host.data[k] = orig + h;
        const double up = loss(xv, gv, bv);
        host.data[k] = orig - h;
        const double dn = loss(xv, gv, bv);
        host.data[k] = orig;
        CHECK(tape.grad(var).data[k] ==
              Catch::Approx((up - dn) / (2 * h)).margin(2e-6));
      }
    };
    fd_check(xv, x);
    fd_check(gv, g);
    fd_check(bv, b);
  }
  SECTION("eval mode uses running statistics") {
    ad::BatchNormRunningStats stats(1);
    stats.mean.data[0] = 1.0;
    stats.var.data[0] = 4.0;
    stats.initialized = true;
    Tape tape;
    auto x = tape.leaf(Tensor({2, 1}, {3.0, 1.0}));
    auto gamma = tape.leaf(Tensor({1}, {1.0}));
    auto beta = tape.leaf(Tensor({1}, {0.0}));
    auto y = tape.batchnorm(x, gamma, beta, stats, false);
    CHECK(tape.value(y).data[0] ==
          Catch::Approx(2.0 / std::sqrt(4.0 + stats.epsilon)));
    CHECK(tape.value(y).data[1] == Catch::Approx(0.0).margin(1e-12));
  }
}

TEST_CASE("log-softmax") {
  SECTION("rows sum to one after exponentiation, huge inputs stay finite") {
    Tape tape;
    auto x = tape.leaf(Tensor({1, 3}, {1000.0, 1000.0, 1000.0}));
    auto y = tape.log_softmax(x);
    double s = 0.0;
    for (double v : tape.value(y).data) s += std::exp(v);
    CHECK(s == Catch::Approx(1.0));
  }
  SECTION("gradient matches finite differences") {
    Rng rng(51);
    Tensor xv = random_tensor({2, 4}, rng);
    // Weighted sum makes the adjoint non-uniform.
    auto loss = [&](const Tensor& x) {
      Tape t2;
      Tensor w(x.shape);
      for (std::size_t k = 0; k < w.data.size(); ++k)
        w.data[k] = 0.1 * static_cast<double>(k + 1);
      auto l = t2.sum(t2.mul(t2.log_softmax(t2.leaf(x)), t2.leaf(std::move(w))));
      return t2.value(l).data[0];
    };
    Tape tape;
    auto x = tape.leaf(xv);
    auto y = tape.log_softmax(x);
    Tensor w(xv.shape);
    for (std::size_t k = 0; k < w.data.size(); ++k)
      w.data[k] = 0.1 * static_cast<double>(k + 1);
    auto l = tape.sum(tape.mul(y, tape.leaf(std::move(w))));
    tape.backward(l);
    const double h = 1e-6;
    for (std::size_t k = 0; k < xv.data.size(); ++k) {
      const double orig = xv.data[k];
      xv.data[k] = orig + h;
      const double up = loss(xv);
      xv.data[k] = orig - h;
      const double dn = loss(xv);
      xv.data[k] = orig;
      CHECK(tape.grad(x).data[k] ==
            Catch::Approx((up - dn) / (2 * h)).margin(1e-6));
    }
  }
}

TEST_CASE("tape lifecycle") {
  SECTION("backward twice is a logic error") {
    Tape tape;
    auto x = tape.leaf(Tensor::scalar(1.0));
    auto y = tape.mul(x, x);
    tape.backward(y);
    CHECK_THROWS_AS(tape.backward(y), std::logic_error);
  }
  SECTION("forward and backward are bitwise deterministic") {
    Rng rng(61);
    Tensor xv = random_tensor({5, 7}, rng);
    Tensor wv = random_tensor({7, 3}, rng);
    Tensor bv = random_tensor({3}, rng);
    auto run = [&]() {
      Tape tape;
      auto x = tape.leaf(xv);
      auto w = tape.leaf(wv);
      auto b = tape.leaf(bv);
      auto l = tape.sum(tape.sigmoid(tape.affine(x, w, b)));
      tape.backward(l);
      auto out = tape.grad(w).data;
      out.push_back(tape.value(l).data[0]);
      return out;
    };
    CHECK(run() == run());
  }
}

TEST_CASE("adam optimizer") {
  SECTION("zero gradients leave parameters unchanged") {
    Tensor p({2}, {1.0, -2.0});
    Tensor g({2}, {0.0, 0.0});
    ad::AdamState st;
    st.init({&p}, {});
    adam_step({&p}, {&g}, st);
    CHECK(p.data[0] == 1.0);
    CHECK(p.data[1] == -2.0);
    CHECK(st.step == 1);
  }
  SECTION("first step on a quadratic moves toward zero by at most lr") {
    Tensor p({1}, {5.0});
    ad::AdamState st;
    ad::AdamHyper h;
    h.lr = 0.1;
    st.init({&p}, h);
    Tensor g({1}, {2.0 * p.data[0]});
    adam_step({&p}, {&g}, st);
    CHECK(p.data[0] < 5.0);
    CHECK(5.0 - p.data[0] <= h.lr + 1e-12);
  }
  SECTION("repeated steps shrink a quadratic objective") {
    Tensor p({1}, {3.0});
    ad::AdamState st;
    ad::AdamHyper h;
    h.lr = 0.05;
    st.init({&p}, h);
    for (int k = 0; k < 400; ++k) {
      Tensor g({1}, {2.0 * p.data[0]});
      adam_step({&p}, {&g}, st);
    }
    CHECK(std::abs(p.data[0]) < 0.1);
  }
  SECTION("non-finite gradient skips the update but advances the step") {
    Tensor p({1}, {1.0});
    ad::AdamState st;
    st.init({&p}, {});
    Tensor g({1}, {std::numeric_limits<double>::quiet_NaN()});
    adam_step({&p}, {&g}, st);
    CHECK(p.data[0] == 1.0);
    CHECK(st.skipped_nonfinite == 1);
    CHECK(st.step == 1);
  }
}
