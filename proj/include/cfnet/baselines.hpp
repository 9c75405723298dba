#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "cfnet/linalg.hpp"
#include "cfnet/rng.hpp"
#include "cfnet/system_model.hpp"

namespace cfnet {

struct FlopsBreakdown {
  std::size_t total = 0;
  std::map<std::string, std::size_t> per_formula_terms;
};

// FLOPs(RSA+ZFBF) = 6BN [ 2 I Mt Mr + (2Mt + I Mr)(I Mr)^2 ].
inline FlopsBreakdown flops_rsa_zfbf(const SystemConfig& sys) {
  const std::size_t b = sys.b, n = sys.n, i = sys.i, mt = sys.mt, mr = sys.mr;
  FlopsBreakdown f;
  const std::size_t gram = 2 * i * mt * mr;
  const std::size_t pinv = (2 * mt + i * mr) * (i * mr) * (i * mr);
  f.per_formula_terms["gram"] = 6 * b * n * gram;
  f.per_formula_terms["pseudo_inverse"] = 6 * b * n * pinv;
  f.total = 6 * b * n * (gram + pinv);
  return f;
}

// FLOPs(GSA+ZFBF) = 6BNI [ 2 Mt Mr + (2I+1) Mt Mr^2 + (I^2+1) Mr^3 ].
inline FlopsBreakdown flops_gsa_zfbf(const SystemConfig& sys) {
  const std::size_t b = sys.b, n = sys.n, i = sys.i, mt = sys.mt, mr = sys.mr;
  FlopsBreakdown f;
  const std::size_t t1 = 2 * mt * mr;
  const std::size_t t2 = (2 * i + 1) * mt * mr * mr;
  const std::size_t t3 = (i * i + 1) * mr * mr * mr;
  f.per_formula_terms["channel_quality"] = 6 * b * n * i * t1;
  f.per_formula_terms["gram"] = 6 * b * n * i * t2;
  f.per_formula_terms["inverse"] = 6 * b * n * i * t3;
  f.total = 6 * b * n * i * (t1 + t2 + t3);
  return f;
}

namespace detail {

// det of a small Hermitian PSD Gram matrix via complex Gaussian elimination.
inline double gram_determinant(CMatrix g) {
  const std::size_t n = g.rows();
  std::complex<double> det{1.0, 0.0};
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t r = k + 1; r < n; ++r)
      if (std::abs(g(r, k)) > std::abs(g(piv, k))) piv = r;
    if (piv != k) {
      for (std::size_t c = 0; c < n; ++c) std::swap(g(k, c), g(piv, c));
      det = -det;
    }
    if (std::abs(g(k, k)) == 0.0) return 0.0;
    det *= g(k, k);
    for (std::size_t r = k + 1; r < n; ++r) {
      const auto factor = g(r, k) / g(k, k);
      for (std::size_t c = k; c < n; ++c) g(r, c) -= factor * g(k, c);
    }
  }
  return det.real();
}

}  // namespace detail

// Channel block H_{n,i}^b as an M_t x M_r matrix.
inline CMatrix channel_block(const ChannelSample& h, std::size_t b,
                             std::size_t n, std::size_t i) {
  CMatrix m(h.dims.mt, h.dims.mr);
  for (std::size_t tx = 0; tx < h.dims.mt; ++tx)
    for (std::size_t rx = 0; rx < h.dims.mr; ++rx)
      m(tx, rx) = h.at(b, n, i, tx, rx);
  return m;
}

// Zero-forcing precoders for a set of users scheduled on one (b,n): stack
// their channel blocks into G (M_t x k*M_r), take the right pseudo-inverse
// P = G (G^H G)^-1, and use the first column of each user's block. Returns
// unit-normalized vectors; falls back to a matched filter (first channel
// column) when the stacked Gram is singular or streams exceed M_t.
struct ZfResult {
  std::vector<std::vector<std::complex<double>>> w;  // per user, length M_t
  bool fallback = false;
};

inline ZfResult zf_precoders(const std::vector<CMatrix>& user_channels) {
  ZfResult out;
  const std::size_t k = user_channels.size();
  if (k == 0) return out;
  const std::size_t mt = user_channels[0].rows();
  const std::size_t mr = user_channels[0].cols();
  out.w.assign(k, std::vector<std::complex<double>>(mt, {0.0, 0.0}));

  auto matched_filter = [&] {
    out.fallback = true;
    for (std::size_t u = 0; u < k; ++u)
      for (std::size_t t = 0; t < mt; ++t) out.w[u][t] = user_channels[u](t, 0);
  };

  if (k * mr > mt) {
    matched_filter();
  } else {
    CMatrix g(mt, k * mr);
    for (std::size_t u = 0; u < k; ++u)
      for (std::size_t t = 0; t < mt; ++t)
        for (std::size_t r = 0; r < mr; ++r)
          g(t, u * mr + r) = user_channels[u](t, r);
    try {
      const CMatrix gram_inv = inverse_hpd(matmul(hermitian(g), g));
      const CMatrix pinv = matmul(g, gram_inv);
      for (std::size_t u = 0; u < k; ++u)
        for (std::size_t t = 0; t < mt; ++t) out.w[u][t] = pinv(t, u * mr);
    } catch (const DefinitenessError&) {
      matched_filter();
    }
  }

  // Unit norm per user; power scaling is applied by the caller.
  for (auto& w : out.w) {
    double nrm2 = 0.0;
    for (const auto& c : w) nrm2 += std::norm(c);
    if (nrm2 > 0.0) {
      const double inv = 1.0 / std::sqrt(nrm2);
      for (auto& c : w) c *= inv;
    }
  }
  return out;
}

namespace detail {

// Shared construction: given a chosen user per (b,n), run ZF and equal power
// split P_max/N per subcarrier.
inline AllocationDecision build_single_user_zf(
    const ChannelSample& h, const SystemConfig& sys,
    const std::vector<std::vector<std::size_t>>& chosen,  // [b][n] -> user
    std::size_t* fallback_count) {
  auto y = AllocationDecision::zeros(h.dims);
  const double amp = std::sqrt(sys.p_max / static_cast<double>(sys.n));
  for (std::size_t b = 0; b < sys.b; ++b)
    for (std::size_t n = 0; n < sys.n; ++n) {
      const std::size_t i = chosen[b][n];
      const auto zf = zf_precoders({channel_block(h, b, n, i)});
      if (zf.fallback && fallback_count) ++*fallback_count;
      y.v[y.v_index(b, n, i)] = 1.0;
      y.v_relaxed[y.v_index(b, n, i)] = 1.0;
      for (std::size_t m = 0; m < sys.mt; ++m)
        y.w[y.w_index(b, n, i, m)] = amp * zf.w[0][m];
    }
  return y;
}

}  // namespace detail

// Random subcarrier allocation + ZF beamforming with equal power.
inline AllocationDecision rsa_zfbf(const ChannelSample& h,
                                   const SystemConfig& sys, Rng& rng,
                                   std::size_t* fallback_count = nullptr) {
  std::vector<std::vector<std::size_t>> chosen(
      sys.b, std::vector<std::size_t>(sys.n));
  for (std::size_t b = 0; b < sys.b; ++b)
    for (std::size_t n = 0; n < sys.n; ++n)
      chosen[b][n] = static_cast<std::size_t>(rng.uniform_index(sys.i));
  return detail::build_single_user_zf(h, sys, chosen, fallback_count);
}

// Greedy subcarrier allocation by channel quality det(H^H H) + ZF.
inline AllocationDecision gsa_zfbf(const ChannelSample& h,
                                   const SystemConfig& sys,
                                   std::size_t* fallback_count = nullptr) {
  std::vector<std::vector<std::size_t>> chosen(
      sys.b, std::vector<std::size_t>(sys.n));
  for (std::size_t b = 0; b < sys.b; ++b)
    for (std::size_t n = 0; n < sys.n; ++n) {
      std::size_t best = 0;
      double best_q = -1.0;
      for (std::size_t i = 0; i < sys.i; ++i) {
        const CMatrix hb = channel_block(h, b, n, i);
        const double q = detail::gram_determinant(matmul(hermitian(hb), hb));
        if (q > best_q) {
          best_q = q;
          best = i;
        }
      }
      chosen[b][n] = best;
    }
  return detail::build_single_user_zf(h, sys, chosen, fallback_count);
}

}  // namespace cfnet
