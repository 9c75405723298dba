#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "cfnet/channel.hpp"
#include "cfnet/linalg.hpp"
#include "cfnet/losses.hpp"

namespace cfnet {

inline double dbm_to_watts(double dbm) {
  return std::pow(10.0, (dbm - 30.0) / 10.0);
}

inline double watts_to_dbm(double w) { return 10.0 * std::log10(w) + 30.0; }

struct SystemConfig {
  std::uint32_t b = 3, n = 4, i = 10, mt = 4, mr = 2;
  double sigma2 = dbm_to_watts(-26.0);  // watts
  double p_max = dbm_to_watts(40.0);    // watts per SBS
  double r_min = 0.02;                  // bps/Hz per user
  std::vector<double> alpha;            // per-user weights; empty => all 1

  double alpha_of(std::size_t user) const {
    return alpha.empty() ? 1.0 : alpha[user];
  }
  std::size_t task_count() const { return std::size_t(i) + b + 1; }
  ChannelDims dims() const { return {b, n, i, mt, mr}; }
};

// Joint allocation output y = {w, v}: complex beamformers [b][n][i][M_t],
// binary subcarrier indicators [b][n][i], and the relaxed v in [0,1].
struct AllocationDecision {
  ChannelDims dims;
  std::vector<std::complex<double>> w;  // [b][n][i][mt]
  std::vector<double> v;                // binary, [b][n][i]
  std::vector<double> v_relaxed;        // [0,1], [b][n][i]

  static AllocationDecision zeros(const ChannelDims& d) {
    AllocationDecision y;
    y.dims = d;
    y.w.assign(std::size_t(d.b) * d.n * d.i * d.mt, {0.0, 0.0});
    y.v.assign(std::size_t(d.b) * d.n * d.i, 0.0);
    y.v_relaxed = y.v;
    return y;
  }

  std::size_t w_index(std::size_t b, std::size_t n, std::size_t i,
                      std::size_t m) const {
    return ((b * dims.n + n) * dims.i + i) * dims.mt + m;
  }
  std::size_t v_index(std::size_t b, std::size_t n, std::size_t i) const {
    return (b * dims.n + n) * dims.i + i;
  }
};

namespace detail {

// Effective transmit vector x_{n,j} = v_tilde_{n,j} w_{n,j}, stacked over
// SBSs (length B*M_t). `gate` selects binary v or relaxed v.
inline std::vector<std::complex<double>> effective_beam(
    const AllocationDecision& y, std::size_t n, std::size_t j,
    bool relaxed = false) {
  const auto& d = y.dims;
  std::vector<std::complex<double>> x(std::size_t(d.b) * d.mt);
  for (std::size_t b = 0; b < d.b; ++b) {
    const double g =
        relaxed ? y.v_relaxed[y.v_index(b, n, j)] : y.v[y.v_index(b, n, j)];
    for (std::size_t m = 0; m < d.mt; ++m)
      x[b * d.mt + m] = g * y.w[y.w_index(b, n, j, m)];
  }
  return x;
}

// u = H_{n,i}^H x  (M_r vector), H_{n,i} stacked over SBSs.
inline std::vector<std::complex<double>> received_direction(
    const ChannelSample& h, std::size_t n, std::size_t i,
    const std::vector<std::complex<double>>& x) {
  const auto& d = h.dims;
  std::vector<std::complex<double>> u(d.mr, {0.0, 0.0});
  for (std::size_t b = 0; b < d.b; ++b)
    for (std::size_t tx = 0; tx < d.mt; ++tx) {
      const auto xv = x[b * d.mt + tx];
      if (xv == std::complex<double>{0.0, 0.0}) continue;
      for (std::size_t rx = 0; rx < d.mr; ++rx)
        u[rx] += std::conj(h.at(b, n, i, tx, rx)) * xv;
    }
  return u;
}

inline void add_outer_product(CMatrix& m,
                              const std::vector<std::complex<double>>& u) {
  for (std::size_t r = 0; r < u.size(); ++r)
    for (std::size_t c = 0; c < u.size(); ++c)
      m(r, c) += u[r] * std::conj(u[c]);
}

}  // namespace detail

// S_{n,i}: desired-signal covariance (M_r x M_r, Hermitian PSD).
inline CMatrix signal_cov(const ChannelSample& h, const AllocationDecision& y,
                          std::size_t n, std::size_t i) {
  CMatrix s(h.dims.mr, h.dims.mr);
  const auto u = detail::received_direction(
      h, n, i, detail::effective_beam(y, n, i));
  detail::add_outer_product(s, u);
  return s;
}

// A_{n,i}: interference-plus-noise covariance (HPD since sigma2 > 0).
inline CMatrix interference_cov(const ChannelSample& h,
                                const AllocationDecision& y, std::size_t n,
                                std::size_t i, double sigma2) {
  CMatrix a(h.dims.mr, h.dims.mr);
  for (std::size_t j = 0; j < h.dims.i; ++j) {
    if (j == i) continue;
    const auto u =
        detail::received_direction(h, n, i, detail::effective_beam(y, n, j));
    detail::add_outer_product(a, u);
  }
  for (std::size_t r = 0; r < h.dims.mr; ++r) a(r, r) += sigma2;
  return a;
}

// r_i = sum_n log2 |I + S A^-1|, evaluated as (ln|A+S| - ln|A|) / ln 2 so
// only HPD log-determinants are needed.
inline double user_rate(const ChannelSample& h, const AllocationDecision& y,
                        std::size_t i, double sigma2) {
  constexpr double kInvLn2 = 1.4426950408889634073599246810019;
  double r = 0.0;
  for (std::size_t n = 0; n < h.dims.n; ++n) {
    const CMatrix a = interference_cov(h, y, n, i, sigma2);
    const CMatrix s = signal_cov(h, y, n, i);
    r += (logdet_hpd(a + s) - logdet_hpd(a)) * kInvLn2;
  }
  return r;
}

// sum_n sum_i v_{n,i}^b ||w_{n,i}^b||^2.
inline double transmit_power(const AllocationDecision& y, std::size_t b) {
  double p = 0.0;
  const auto& d = y.dims;
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t i = 0; i < d.i; ++i) {
      const double g = y.v[y.v_index(b, n, i)];
      if (g == 0.0) continue;
      double nrm2 = 0.0;
      for (std::size_t m = 0; m < d.mt; ++m)
        nrm2 += std::norm(y.w[y.w_index(b, n, i, m)]);
      p += g * nrm2;
    }
  return p;
}

inline TaskValues task_values(const ChannelSample& h,
                              const AllocationDecision& y,
                              const SystemConfig& cfg) {
  TaskValues tv;
  tv.g.resize(cfg.i);
  tv.l.resize(cfg.b);
  double weighted = 0.0;
  for (std::size_t i = 0; i < cfg.i; ++i) {
    const double r = user_rate(h, y, i, cfg.sigma2);
    weighted += cfg.alpha_of(i) * r;
    tv.g[i] = cfg.r_min - r;
  }
  tv.f = -weighted;
  for (std::size_t b = 0; b < cfg.b; ++b)
    tv.l[b] = transmit_power(y, b) - cfg.p_max;
  return tv;
}

}  // namespace cfnet
