#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfnet/autodiff.hpp"
#include "cfnet/linalg.hpp"
#include "cfnet/system_model.hpp"

namespace cfnet {

// Gradients of the task values with respect to the allocation. Complex
// gradients use the real-pair convention g = dL/dRe + i * dL/dIm.
struct RateGraphGrads {
  std::vector<std::complex<double>> d_w;  // [b][n][i][mt]
  std::vector<double> d_v;                // [b][n][i]
};

// Differentiable evaluation of (f, g_1..I, l_1..B) from Eqs. (2)-(5)-style
// covariances, with custom adjoints for the Hermitian outer products and the
// HPD log-determinants. The forward path matches task_values exactly: both
// evaluate log2|I + S A^-1| as (ln|A+S| - ln|A|)/ln 2.
class RateGraph {
 public:
  // `gate` holds the v values actually multiplied into the beamformers:
  // binary v under straight-through training/evaluation, relaxed v for
  // gradient checks.
  RateGraph(const ChannelSample& h, std::vector<std::complex<double>> w,
            std::vector<double> gate, const SystemConfig& cfg)
      : h_(&h), cfg_(&cfg), w_(std::move(w)), gate_(std::move(gate)) {
    const auto d = cfg.dims();
    if (h.dims != d)
      throw std::invalid_argument("rate_graph: channel dims mismatch");
    if (w_.size() != std::size_t(d.b) * d.n * d.i * d.mt ||
        gate_.size() != std::size_t(d.b) * d.n * d.i)
      throw std::invalid_argument("rate_graph: allocation dims mismatch");
    forward();
  }

  const TaskValues& values() const { return tv_; }

  // Accumulates d(f,g,l) seeds into gradients on w and the gate.
  RateGraphGrads backward(double d_f, const std::vector<double>& d_g,
                          const std::vector<double>& d_l) const {
    const auto d = cfg_->dims();
    RateGraphGrads out;
    out.d_w.assign(w_.size(), {0.0, 0.0});
    out.d_v.assign(gate_.size(), 0.0);

    // dL/dr_i combining the objective and the rate residual.
    std::vector<double> c(d.i);
    for (std::size_t i = 0; i < d.i; ++i)
      c[i] = -d_f * cfg_->alpha_of(i) - d_g[i];

    constexpr double kInvLn2 = 1.4426950408889634073599246810019;
    const std::size_t mr = d.mr;
    for (std::size_t n = 0; n < d.n; ++n) {
      // G_x accumulated per transmit stream j on this subcarrier.
      std::vector<std::vector<std::complex<double>>> gx(
          d.i, std::vector<std::complex<double>>(std::size_t(d.b) * d.mt,
                                                 {0.0, 0.0}));
      for (std::size_t i = 0; i < d.i; ++i) {
        const auto& node = nodes_[n * d.i + i];
        const double ci = c[i] * kInvLn2;
        if (ci == 0.0) continue;
        // G_T = ci * T^-1, G_A = -ci * A^-1 (both Hermitian).
        for (std::size_t j = 0; j < d.i; ++j) {
          // G_u = 2 (G_T [+ G_A if j != i]) u_ij
          std::vector<std::complex<double>> gu(mr, {0.0, 0.0});
          const auto& u = node.u[j];
          for (std::size_t r = 0; r < mr; ++r) {
            std::complex<double> acc{0.0, 0.0};
            for (std::size_t cix = 0; cix < mr; ++cix) {
              std::complex<double> gm = node.t_inv(r, cix);
              if (j != i) gm -= node.a_inv(r, cix);
              acc += gm * u[cix];
            }
            gu[r] = 2.0 * ci * acc;
          }
          // G_x += H_{n,i} G_u
          auto& gxj = gx[j];
          for (std::size_t b = 0; b < d.b; ++b)
            for (std::size_t tx = 0; tx < d.mt; ++tx) {
              std::complex<double> acc{0.0, 0.0};
              for (std::size_t rx = 0; rx < mr; ++rx)
                acc += h_->at(b, n, i, tx, rx) * gu[rx];
              gxj[b * d.mt + tx] += acc;
            }
        }
      }
      // x = gate * w : route G_x into w and the gate.
      for (std::size_t j = 0; j < d.i; ++j)
        for (std::size_t b = 0; b < d.b; ++b) {
          const std::size_t vi = (b * d.n + n) * d.i + j;
          const double g = gate_[vi];
          double dv = 0.0;
          for (std::size_t m = 0; m < d.mt; ++m) {
            const std::size_t wi = vi * d.mt + m;
            const auto gxv = gx[j][b * d.mt + m];
            out.d_w[wi] += g * gxv;
            dv += gxv.real() * w_[wi].real() + gxv.imag() * w_[wi].imag();
          }
          out.d_v[vi] += dv;
        }
    }

    // Power residuals: l_b = sum_{n,i} gate * ||w||^2 - p_max.
    for (std::size_t b = 0; b < d.b; ++b) {
      const double gl = d_l[b];
      if (gl == 0.0) continue;
      for (std::size_t n = 0; n < d.n; ++n)
        for (std::size_t i = 0; i < d.i; ++i) {
          const std::size_t vi = (b * d.n + n) * d.i + i;
          const double g = gate_[vi];
          double nrm2 = 0.0;
          for (std::size_t m = 0; m < d.mt; ++m) {
            const std::size_t wi = vi * d.mt + m;
            out.d_w[wi] += gl * g * 2.0 * w_[wi];
            nrm2 += std::norm(w_[wi]);
          }
          out.d_v[vi] += gl * nrm2;
        }
    }
    return out;
  }

 private:
  struct PairNode {
    std::vector<std::vector<std::complex<double>>> u;  // per j, length M_r
    CMatrix a_inv;  // interference-plus-noise inverse
    CMatrix t_inv;  // (A + S) inverse
  };

  void forward() {
    const auto d = cfg_->dims();
    const std::size_t mr = d.mr;
    constexpr double kInvLn2 = 1.4426950408889634073599246810019;
    tv_.g.assign(d.i, 0.0);
    tv_.l.assign(d.b, 0.0);
    nodes_.resize(std::size_t(d.n) * d.i);

    std::vector<double> rates(d.i, 0.0);
    for (std::size_t n = 0; n < d.n; ++n) {
      // Effective transmit vectors x_j = gate_j w_j on subcarrier n.
      std::vector<std::vector<std::complex<double>>> x(
          d.i, std::vector<std::complex<double>>(std::size_t(d.b) * d.mt));
      for (std::size_t j = 0; j < d.i; ++j)
        for (std::size_t b = 0; b < d.b; ++b) {
          const std::size_t vi = (b * d.n + n) * d.i + j;
          for (std::size_t m = 0; m < d.mt; ++m)
            x[j][b * d.mt + m] = gate_[vi] * w_[vi * d.mt + m];
        }
      for (std::size_t i = 0; i < d.i; ++i) {
        PairNode& node = nodes_[n * d.i + i];
        node.u.resize(d.i);
        CMatrix a(mr, mr), t(mr, mr);
        for (std::size_t j = 0; j < d.i; ++j) {
          auto& u = node.u[j];
          u.assign(mr, {0.0, 0.0});
          for (std::size_t b = 0; b < d.b; ++b)
            for (std::size_t tx = 0; tx < d.mt; ++tx) {
              const auto xv = x[j][b * d.mt + tx];
              if (xv == std::complex<double>{0.0, 0.0}) continue;
              for (std::size_t rx = 0; rx < mr; ++rx)
                u[rx] += std::conj(h_->at(b, n, i, tx, rx)) * xv;
            }
          for (std::size_t r = 0; r < mr; ++r)
            for (std::size_t cix = 0; cix < mr; ++cix) {
              const auto p = u[r] * std::conj(u[cix]);
              t(r, cix) += p;
              if (j != i) a(r, cix) += p;
            }
        }
        for (std::size_t r = 0; r < mr; ++r) {
          a(r, r) += cfg_->sigma2;
          t(r, r) += cfg_->sigma2;
        }
        const auto fa = factorize_hpd(a);
        const auto ft = factorize_hpd(t);
        const double dr = (ft.logdet - fa.logdet) * kInvLn2;
        if (!std::isfinite(dr))
          throw ad::NumericError("rate_graph: non-finite rate at (n=" +
                                 std::to_string(n) +
                                 ", i=" + std::to_string(i) + ")");
        rates[i] += dr;
        node.a_inv = fa.inverse;
        node.t_inv = ft.inverse;
      }
    }

    double weighted = 0.0;
    for (std::size_t i = 0; i < d.i; ++i) {
      weighted += cfg_->alpha_of(i) * rates[i];
      tv_.g[i] = cfg_->r_min - rates[i];
    }
    tv_.f = -weighted;
    for (std::size_t b = 0; b < d.b; ++b) {
      double p = 0.0;
      for (std::size_t n = 0; n < d.n; ++n)
        for (std::size_t i = 0; i < d.i; ++i) {
          const std::size_t vi = (b * d.n + n) * d.i + i;
          double nrm2 = 0.0;
          for (std::size_t m = 0; m < d.mt; ++m)
            nrm2 += std::norm(w_[vi * d.mt + m]);
          p += gate_[vi] * nrm2;
        }
      tv_.l[b] = p - cfg_->p_max;
    }
  }

  const ChannelSample* h_;
  const SystemConfig* cfg_;
  std::vector<std::complex<double>> w_;
  std::vector<double> gate_;
  TaskValues tv_;
  std::vector<PairNode> nodes_;
};

}  // namespace cfnet
