#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace cfnet {

enum class NflVariant {
  // C1 extension: the linear branch x/x1^2 - 2/x1 meets -1/x at the knot
  // with matching value and slope.
  kContinuous,
  // Literal linear branch x/x1^2 - 1/x1 (jump at the knot).
  kAsPrinted,
};

enum class LossScheme { kS1, kS2, kB1, kB2, kB3 };

struct LossHyper {
  double x1 = -1.0;   // NFL knot, < 0
  double x2 = 0.0;    // EL knot
  double x3 = 0.11;   // Huber knot, > 0
  NflVariant nfl_variant = NflVariant::kContinuous;
};

inline double nfl(double x, double x1,
                  NflVariant variant = NflVariant::kContinuous) {
  if (x >= x1) {
    const double lin = x / (x1 * x1);
    return variant == NflVariant::kContinuous ? lin - 2.0 / x1 : lin - 1.0 / x1;
  }
  return -1.0 / x;
}

inline double nfl_grad(double x, double x1) {
  return x >= x1 ? 1.0 / (x1 * x1) : 1.0 / (x * x);
}

inline double el(double x, double x2) {
  return x >= x2 ? std::exp(x2) * (x + 1.0 - x2) : std::exp(x);
}

inline double el_grad(double x, double x2) {
  return x >= x2 ? std::exp(x2) : std::exp(x);
}

inline double huber(double x, double x3) {
  const double a = std::abs(x);
  return a >= x3 ? a - 0.5 * x3 : x * x / (2.0 * x3);
}

inline double huber_grad(double x, double x3) {
  const double a = std::abs(x);
  return a >= x3 ? (x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0)) : x / x3;
}

// Scalar task values of problem P2: objective f, per-user rate residuals g,
// per-SBS power residuals l.
struct TaskValues {
  double f = 0.0;
  std::vector<double> g;  // length I
  std::vector<double> l;  // length B
};

struct TaskLossVector {
  double l0 = 0.0;
  std::vector<double> l1;  // length I
  std::vector<double> l2;  // length B
  // d(loss)/d(task value), needed by the training backward pass.
  double dl0 = 0.0;
  std::vector<double> dl1;
  std::vector<double> dl2;
  // Baseline 2 denominator clamps hit while evaluating this vector.
  int clamp_events = 0;
};

namespace detail {

inline double b2_frac(double x, int& clamps) {
  double d = x;
  if (std::abs(d) < 1e-12) {
    d = d < 0.0 ? -1e-12 : 1e-12;
    ++clamps;
  }
  return -1.0 / d;
}

inline double b2_frac_grad(double x) {
  double d = x;
  if (std::abs(d) < 1e-12) d = d < 0.0 ? -1e-12 : 1e-12;
  return 1.0 / (d * d);
}

}  // namespace detail

inline TaskLossVector scheme_losses(const TaskValues& tv, LossScheme scheme,
                                    const LossHyper& h) {
  TaskLossVector out;
  out.l1.resize(tv.g.size());
  out.dl1.resize(tv.g.size());
  out.l2.resize(tv.l.size());
  out.dl2.resize(tv.l.size());
  auto rate_loss = [&](double x, double& val, double& grad) {
    switch (scheme) {
      case LossScheme::kS1:
        val = nfl(x, h.x1, h.nfl_variant);
        grad = nfl_grad(x, h.x1);
        break;
      case LossScheme::kS2:
        val = el(x, h.x2);
        grad = el_grad(x, h.x2);
        break;
      case LossScheme::kB1:
        val = x;
        grad = 1.0;
        break;
      case LossScheme::kB2:
        val = detail::b2_frac(x, out.clamp_events);
        grad = detail::b2_frac_grad(x);
        break;
      case LossScheme::kB3:
        val = std::exp(x);
        grad = std::exp(x);
        break;
    }
  };
  rate_loss(tv.f, out.l0, out.dl0);
  for (std::size_t i = 0; i < tv.g.size(); ++i)
    rate_loss(tv.g[i], out.l1[i], out.dl1[i]);
  for (std::size_t b = 0; b < tv.l.size(); ++b) {
    if (scheme == LossScheme::kB1) {
      out.l2[b] = tv.l[b];
      out.dl2[b] = 1.0;
    } else {
      out.l2[b] = huber(tv.l[b], h.x3);
      out.dl2[b] = huber_grad(tv.l[b], h.x3);
    }
  }
  return out;
}

// Learnable per-task weights beta = (beta0, beta_{1,1..I}, beta_{2,1..B}).
using LossWeights = std::vector<double>;

// Weight-adaptive joint loss: sum_k L_k / (K beta_k^2) + ln(prod beta_k).
inline double joint_loss(const TaskLossVector& tl, const LossWeights& beta,
                         std::size_t k_tasks) {
  const std::size_t i_count = tl.l1.size();
  const std::size_t b_count = tl.l2.size();
  if (k_tasks != i_count + b_count + 1 || beta.size() != k_tasks)
    throw std::invalid_argument("joint_loss: K must equal I+B+1 and match beta");
  double sum = 0.0, logterm = 0.0;
  auto add = [&](double loss, double b) {
    if (!(b > 0.0)) throw std::domain_error("joint_loss: beta must be > 0");
    sum += loss / (static_cast<double>(k_tasks) * b * b);
    logterm += std::log(b);
  };
  add(tl.l0, beta[0]);
  for (std::size_t i = 0; i < i_count; ++i) add(tl.l1[i], beta[1 + i]);
  for (std::size_t b = 0; b < b_count; ++b)
    add(tl.l2[b], beta[1 + i_count + b]);
  return sum + logterm;
}

// d(joint)/d(L_k) and d(joint)/d(beta_k) for the backward pass.
struct JointLossGrads {
  std::vector<double> d_loss;  // 1/(K beta_k^2)
  std::vector<double> d_beta;  // -2 L_k/(K beta_k^3) + 1/beta_k
};

inline JointLossGrads joint_loss_grads(const TaskLossVector& tl,
                                       const LossWeights& beta,
                                       std::size_t k_tasks) {
  JointLossGrads g;
  g.d_loss.resize(k_tasks);
  g.d_beta.resize(k_tasks);
  const double kd = static_cast<double>(k_tasks);
  std::vector<double> losses;
  losses.reserve(k_tasks);
  losses.push_back(tl.l0);
  losses.insert(losses.end(), tl.l1.begin(), tl.l1.end());
  losses.insert(losses.end(), tl.l2.begin(), tl.l2.end());
  for (std::size_t k = 0; k < k_tasks; ++k) {
    const double b = beta[k];
    g.d_loss[k] = 1.0 / (kd * b * b);
    g.d_beta[k] = -2.0 * losses[k] / (kd * b * b * b) + 1.0 / b;
  }
  return g;
}

inline double minibatch_joint_loss(
    const std::vector<std::pair<TaskLossVector, LossWeights>>& samples,
    std::size_t k_tasks) {
  if (samples.empty())
    throw std::invalid_argument("minibatch_joint_loss: empty batch");
  double s = 0.0;
  for (const auto& [tl, beta] : samples) s += joint_loss(tl, beta, k_tasks);
  return s / static_cast<double>(samples.size());
}

}  // namespace cfnet
