#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfnet/autodiff.hpp"
#include "cfnet/losses.hpp"
#include "cfnet/rng.hpp"

namespace cfnet {

enum class RobustLoss { kNfl, kEl };

inline std::string robust_loss_name(RobustLoss l) {
  return l == RobustLoss::kNfl ? "nfl" : "el";
}

// Classification residual: the loss is applied to 2 - 2*u_c, twice the MAE
// between the one-hot target and the softmax output.
inline double residual_loss(RobustLoss l, double u_c, const LossHyper& h) {
  const double x = 2.0 - 2.0 * u_c;
  return l == RobustLoss::kNfl ? nfl(x, h.x1, h.nfl_variant) : el(x, h.x2);
}

// d(residual loss)/d(u_c).
inline double residual_loss_grad(RobustLoss l, double u_c,
                                 const LossHyper& h) {
  const double x = 2.0 - 2.0 * u_c;
  const double dx =
      l == RobustLoss::kNfl ? nfl_grad(x, h.x1) : el_grad(x, h.x2);
  return -2.0 * dx;
}

// C = sum_j L(2 - 2 u_j) under sum_j u_j = 1, constant because both losses
// are affine on [0, 2] (the knots sit at or below 0).
inline double symmetry_constant(RobustLoss l, std::size_t z,
                                const LossHyper& h) {
  const double zd = static_cast<double>(z);
  if (l == RobustLoss::kEl) {
    if (h.x2 > 0.0)
      throw std::invalid_argument("symmetry_constant: requires x2 <= 0");
    return std::exp(h.x2) * (zd * (3.0 - h.x2) - 2.0);
  }
  if (h.x1 >= 0.0)
    throw std::invalid_argument("symmetry_constant: requires x1 < 0");
  if (h.nfl_variant != NflVariant::kContinuous)
    throw std::invalid_argument(
        "symmetry_constant: derived for the continuous branch");
  return (2.0 * zd - 2.0) / (h.x1 * h.x1) - 2.0 * zd / h.x1;
}

// Risk under symmetric label noise of rate eta:
// R^eta = (1 - eta Z/(Z-1)) R + C eta/(Z-1).
inline double noisy_risk_affine(double clean_risk, double eta, std::size_t z,
                                double c) {
  const double zm1 = static_cast<double>(z) - 1.0;
  return (1.0 - eta * static_cast<double>(z) / zm1) * clean_risk +
         c * eta / zm1;
}

// Shift-invariant softmax.
inline std::vector<double> softmax(const std::vector<double>& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> u(logits.size());
  double s = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    u[k] = std::exp(logits[k] - mx);
    s += u[k];
  }
  for (auto& v : u) v /= s;
  return u;
}

// Symmetric label corruption: each label flips with probability eta to a
// uniformly random different class. The identity only holds below the
// breakdown point eta < (Z-1)/Z.
inline std::vector<int> corrupt_symmetric(const std::vector<int>& labels,
                                          std::size_t z, double eta,
                                          Rng& rng) {
  if (z < 2) throw std::invalid_argument("corrupt_symmetric: Z >= 2");
  const double bound = (static_cast<double>(z) - 1.0) / static_cast<double>(z);
  if (eta < 0.0 || eta >= bound)
    throw std::invalid_argument(
        "corrupt_symmetric: eta must lie in [0, (Z-1)/Z)");
  std::vector<int> out = labels;
  for (auto& y : out) {
    if (rng.uniform() < eta) {
      const auto shift = 1 + rng.uniform_index(z - 1);
      y = static_cast<int>((static_cast<std::size_t>(y) + shift) % z);
    }
  }
  return out;
}

// Z Gaussian blobs with unit variance, means on a circle.
struct BlobDataset {
  std::vector<std::array<double, 2>> x;
  std::vector<int> y;
};

inline BlobDataset make_blobs(std::size_t z, std::size_t per_class,
                              std::uint64_t seed, double radius = 5.0) {
  BlobDataset ds;
  Rng rng(Rng::derive(seed, 0xB10B5ULL));
  constexpr double kTau = 6.283185307179586476925286766559;
  for (std::size_t c = 0; c < z; ++c) {
    const double ang = kTau * static_cast<double>(c) / static_cast<double>(z);
    const double mx = radius * std::cos(ang);
    const double my = radius * std::sin(ang);
    for (std::size_t k = 0; k < per_class; ++k) {
      ds.x.push_back({mx + rng.normal(), my + rng.normal()});
      ds.y.push_back(static_cast<int>(c));
    }
  }
  return ds;
}

// One-hidden-layer softmax classifier (width 64) trained with Adam on the
// MAE-style residual losses. Small enough for explicit loops.
class SmallClassifier {
 public:
  SmallClassifier(std::size_t z, std::uint64_t seed, std::size_t hidden = 64)
      : z_(z), hidden_(hidden) {
    Rng rng(Rng::derive(seed, 0xC1A55ULL));
    w1_ = xavier(2, hidden_, rng);
    b1_.assign(hidden_, 0.0);
    w2_ = xavier(hidden_, z_, rng);
    b2_.assign(z_, 0.0);
  }

  std::vector<double> probabilities(const std::array<double, 2>& x) const {
    std::vector<double> h(hidden_);
    for (std::size_t j = 0; j < hidden_; ++j) {
      const double a = x[0] * w1_[j] + x[1] * w1_[hidden_ + j] + b1_[j];
      h[j] = a > 0.0 ? a : 0.0;
    }
    std::vector<double> logits(z_);
    for (std::size_t c = 0; c < z_; ++c) {
      double a = b2_[c];
      for (std::size_t j = 0; j < hidden_; ++j) a += h[j] * w2_[j * z_ + c];
      logits[c] = a;
    }
    return softmax(logits);
  }

  int predict(const std::array<double, 2>& x) const {
    const auto u = probabilities(x);
    return static_cast<int>(
        std::max_element(u.begin(), u.end()) - u.begin());
  }

  double accuracy(const BlobDataset& ds) const {
    std::size_t hit = 0;
    for (std::size_t k = 0; k < ds.x.size(); ++k)
      if (predict(ds.x[k]) == ds.y[k]) ++hit;
    return static_cast<double>(hit) / static_cast<double>(ds.x.size());
  }

  double empirical_risk(const BlobDataset& ds, const std::vector<int>& labels,
                        RobustLoss loss, const LossHyper& h) const {
    double r = 0.0;
    for (std::size_t k = 0; k < ds.x.size(); ++k) {
      const auto u = probabilities(ds.x[k]);
      r += residual_loss(loss, u[static_cast<std::size_t>(labels[k])], h);
    }
    return r / static_cast<double>(ds.x.size());
  }

  void train(const BlobDataset& ds, const std::vector<int>& labels,
             RobustLoss loss, const LossHyper& h, std::size_t epochs,
             std::size_t batch, double lr, std::uint64_t seed) {
    ad::AdamState opt;
    opt.hyper.lr = lr;
    std::vector<ad::Tensor> params = {
        ad::Tensor({2, hidden_}, w1_), ad::Tensor({hidden_}, b1_),
        ad::Tensor({hidden_, z_}, w2_), ad::Tensor({z_}, b2_)};
    std::vector<ad::Tensor*> pptr;
    for (auto& p : params) pptr.push_back(&p);
    opt.init(pptr, opt.hyper);

    Rng rng(Rng::derive(seed, 0x7EA1ULL));
    std::vector<std::size_t> perm(ds.x.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    batch = std::min(batch, ds.x.size());

    for (std::size_t e = 0; e < epochs; ++e) {
      for (std::size_t k = perm.size(); k > 1; --k)
        std::swap(perm[k - 1], perm[rng.uniform_index(k)]);
      for (std::size_t off = 0; off + batch <= perm.size(); off += batch) {
        std::vector<ad::Tensor> grads = {
            ad::Tensor({2, hidden_}), ad::Tensor({hidden_}),
            ad::Tensor({hidden_, z_}), ad::Tensor({z_})};
        for (std::size_t s = 0; s < batch; ++s) {
          const std::size_t idx = perm[off + s];
          accumulate_sample_grad(params, ds.x[idx],
                                 static_cast<std::size_t>(labels[idx]), loss,
                                 h, 1.0 / static_cast<double>(batch), grads);
        }
        std::vector<const ad::Tensor*> gptr;
        for (auto& g : grads) gptr.push_back(&g);
        ad::adam_step(pptr, gptr, opt);
      }
    }
    w1_ = params[0].data;
    b1_ = params[1].data;
    w2_ = params[2].data;
    b2_ = params[3].data;
  }

 private:
  static std::vector<double> xavier(std::size_t in, std::size_t out,
                                    Rng& rng) {
    std::vector<double> w(in * out);
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    for (auto& v : w) v = rng.uniform(-bound, bound);
    return w;
  }

  void accumulate_sample_grad(const std::vector<ad::Tensor>& params,
                              const std::array<double, 2>& x, std::size_t y,
                              RobustLoss loss, const LossHyper& h,
                              double scale,
                              std::vector<ad::Tensor>& grads) const {
    const auto& w1 = params[0].data;
    const auto& b1 = params[1].data;
    const auto& w2 = params[2].data;
    const auto& b2 = params[3].data;
    std::vector<double> a1(hidden_), hdd(hidden_);
    for (std::size_t j = 0; j < hidden_; ++j) {
      a1[j] = x[0] * w1[j] + x[1] * w1[hidden_ + j] + b1[j];
      hdd[j] = a1[j] > 0.0 ? a1[j] : 0.0;
    }
    std::vector<double> logits(z_);
    for (std::size_t c = 0; c < z_; ++c) {
      double a = b2[c];
      for (std::size_t j = 0; j < hidden_; ++j) a += hdd[j] * w2[j * z_ + c];
      logits[c] = a;
    }
    const auto u = softmax(logits);
    // dL/du has a single nonzero entry at the labeled class; the softmax
    // Jacobian gives dlogit_k = du_y * u_y * ([k==y] - u_k).
    const double du_y = residual_loss_grad(loss, u[y], h) * scale;
    std::vector<double> dlogits(z_);
    for (std::size_t c = 0; c < z_; ++c)
      dlogits[c] = du_y * u[y] * ((c == y ? 1.0 : 0.0) - u[c]);
    auto& gw1 = grads[0].data;
    auto& gb1 = grads[1].data;
    auto& gw2 = grads[2].data;
    auto& gb2 = grads[3].data;
    std::vector<double> dh(hidden_, 0.0);
    for (std::size_t c = 0; c < z_; ++c) {
      gb2[c] += dlogits[c];
      for (std::size_t j = 0; j < hidden_; ++j) {
        gw2[j * z_ + c] += hdd[j] * dlogits[c];
        dh[j] += w2[j * z_ + c] * dlogits[c];
      }
    }
    for (std::size_t j = 0; j < hidden_; ++j) {
      if (a1[j] <= 0.0) continue;
      gb1[j] += dh[j];
      gw1[j] += x[0] * dh[j];
      gw1[hidden_ + j] += x[1] * dh[j];
    }
  }

  std::size_t z_, hidden_;
  std::vector<double> w1_, b1_, w2_, b2_;
};

struct NoiseToleranceConfig {
  std::size_t z = 5;
  std::size_t train_per_class = 800;
  std::size_t test_per_class = 200;
  std::vector<double> etas = {0.0, 0.2, 0.4, 0.6};
  std::vector<RobustLoss> losses = {RobustLoss::kNfl, RobustLoss::kEl};
  LossHyper hyper;
  std::size_t epochs = 30;
  std::size_t batch = 100;
  double lr = 1e-2;
  std::uint64_t seed = 7;
};

struct NoiseToleranceRow {
  std::string loss_name;
  double eta = 0.0;
  double clean_test_acc = 0.0;
  double noisy_train_risk = 0.0;
  double predicted_noisy_risk = 0.0;
  double identity_residual = 0.0;  // relative error of the affine identity
};

inline std::vector<NoiseToleranceRow> run_noise_tolerance_experiment(
    const NoiseToleranceConfig& cfg) {
  const auto train = make_blobs(cfg.z, cfg.train_per_class, cfg.seed);
  const auto test = make_blobs(cfg.z, cfg.test_per_class, cfg.seed + 1);
  std::vector<NoiseToleranceRow> rows;
  for (const auto loss : cfg.losses) {
    const double c = symmetry_constant(loss, cfg.z, cfg.hyper);
    for (std::size_t e = 0; e < cfg.etas.size(); ++e) {
      const double eta = cfg.etas[e];
      Rng noise_rng(Rng::derive(cfg.seed, 0xE7A0 + e));
      const auto noisy = corrupt_symmetric(train.y, cfg.z, eta, noise_rng);
      SmallClassifier model(cfg.z, cfg.seed);
      model.train(train, noisy, loss, cfg.hyper, cfg.epochs, cfg.batch,
                  cfg.lr, cfg.seed);
      NoiseToleranceRow row;
      row.loss_name = robust_loss_name(loss);
      row.eta = eta;
      row.clean_test_acc = model.accuracy(test);
      row.noisy_train_risk =
          model.empirical_risk(train, noisy, loss, cfg.hyper);
      const double clean_risk =
          model.empirical_risk(train, train.y, loss, cfg.hyper);
      row.predicted_noisy_risk = noisy_risk_affine(clean_risk, eta, cfg.z, c);
      row.identity_residual =
          std::abs(row.noisy_train_risk - row.predicted_noisy_risk) /
          std::max(std::abs(row.predicted_noisy_risk), 1e-12);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

}  // namespace cfnet
