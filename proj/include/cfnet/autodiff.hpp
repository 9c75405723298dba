#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace cfnet::ad {

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
    data.assign(count(), 0.0);
  }
  Tensor(std::vector<std::size_t> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {}

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  std::size_t count() const {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
  }
  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
};

using EigenMap =
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                             Eigen::RowMajor>>;
using ConstEigenMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                   Eigen::RowMajor>>;

inline EigenMap as_matrix(Tensor& t) {
  return EigenMap(t.data.data(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}
inline ConstEigenMap as_matrix(const Tensor& t) {
  return ConstEigenMap(t.data.data(), static_cast<Eigen::Index>(t.rows()),
                       static_cast<Eigen::Index>(t.cols()));
}

// Running statistics owned by a batch-normalization layer across steps.
struct BatchNormRunningStats {
  Tensor mean;
  Tensor var;
  bool initialized = false;
  double momentum = 0.9;
  double epsilon = 1e-5;

  explicit BatchNormRunningStats(std::size_t width)
      : mean(Tensor({width})), var(Tensor({width})) {
    for (auto& v : var.data) v = 1.0;
  }
  BatchNormRunningStats() = default;
};

// Reverse-mode tape. One forward + one backward per instance; records
// primitive applications in topological order and visits them exactly once
// in reverse.
class Tape {
 public:
  using Var = std::size_t;

  Var leaf(Tensor value) {
    values_.push_back(std::move(value));
    nodes_.push_back({});
    return values_.size() - 1;
  }

  const Tensor& value(Var v) const { return values_.at(v); }
  const Tensor& grad(Var v) const { return grads_.at(v); }

  // y = x W + 1 b^T ; x [S,in], W [in,out], b [out].
  Var affine(Var x, Var w, Var b) {
    const Tensor& xv = values_[x];
    const Tensor& wv = values_[w];
    const Tensor& bv = values_[b];
    if (xv.cols() != wv.rows() || wv.cols() != bv.count())
      throw std::invalid_argument("affine: shape mismatch");
    Tensor out({xv.rows(), wv.cols()});
    as_matrix(out).noalias() = as_matrix(xv) * as_matrix(wv);
    auto om = as_matrix(out);
    for (Eigen::Index r = 0; r < om.rows(); ++r)
      for (Eigen::Index c = 0; c < om.cols(); ++c)
        om(r, c) += bv.data[static_cast<std::size_t>(c)];
    return record(std::move(out), [this, x, w, b](Var y) {
      const Tensor& gy = grads_[y];
      const Tensor& xv = values_[x];
      const Tensor& wv = values_[w];
      as_matrix(grads_[x]).noalias() +=
          as_matrix(gy) * as_matrix(wv).transpose();
      as_matrix(grads_[w]).noalias() +=
          as_matrix(xv).transpose() * as_matrix(gy);
      auto gym = as_matrix(gy);
      for (Eigen::Index c = 0; c < gym.cols(); ++c)
        grads_[b].data[static_cast<std::size_t>(c)] += gym.col(c).sum();
    });
  }

  Var relu(Var x) {
    Tensor out = values_[x];
    for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
    return record(std::move(out), [this, x](Var y) {
      const Tensor& gy = grads_[y];
      const Tensor& xv = values_[x];
      Tensor& gx = grads_[x];
      for (std::size_t k = 0; k < xv.data.size(); ++k)
        if (xv.data[k] > 0.0) gx.data[k] += gy.data[k];
    });
  }

  Var sigmoid(Var x) {
    Tensor out = values_[x];
    for (auto& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
    return record(std::move(out), [this, x](Var y) {
      const Tensor& gy = grads_[y];
      const Tensor& yv = values_[y];
      Tensor& gx = grads_[x];
      for (std::size_t k = 0; k < yv.data.size(); ++k)
        gx.data[k] += gy.data[k] * yv.data[k] * (1.0 - yv.data[k]);
    });
  }

  // Batch normalization over the batch (row) dimension. Train mode uses
  // batch statistics and updates `stats`; eval mode (or a train-mode batch of
  // size 1) uses running statistics.
  Var batchnorm(Var x, Var gamma, Var beta, BatchNormRunningStats& stats,
                bool train) {
    const Tensor& xv = values_[x];
    const std::size_t s = xv.rows(), d = xv.cols();
    if (stats.mean.count() != d)
      throw std::invalid_argument("batchnorm: stats width mismatch");
    const bool use_batch_stats = train && s > 1;
    if (train && s == 1) batch1_fallbacks_++;

    Tensor mean({d}), var({d});
    if (use_batch_stats) {
      for (std::size_t c = 0; c < d; ++c) {
        double m = 0.0;
        for (std::size_t r = 0; r < s; ++r) m += xv.data[r * d + c];
        m /= static_cast<double>(s);
        double v = 0.0;
        for (std::size_t r = 0; r < s; ++r) {
          const double t = xv.data[r * d + c] - m;
          v += t * t;
        }
        v /= static_cast<double>(s);
        mean.data[c] = m;
        var.data[c] = v;
      }
      if (!stats.initialized) {
        stats.mean = mean;
        stats.var = var;
        stats.initialized = true;
      } else {
        for (std::size_t c = 0; c < d; ++c) {
          stats.mean.data[c] =
              stats.momentum * stats.mean.data[c] + (1.0 - stats.momentum) * mean.data[c];
          stats.var.data[c] =
              stats.momentum * stats.var.data[c] + (1.0 - stats.momentum) * var.data[c];
        }
      }
    } else {
      mean = stats.mean;
      var = stats.var;
    }

    Tensor out({s, d});
    Tensor xhat({s, d});
    const Tensor& gv = values_[gamma];
    const Tensor& bv = values_[beta];
    std::vector<double> inv_std(d);
    for (std::size_t c = 0; c < d; ++c)
      inv_std[c] = 1.0 / std::sqrt(var.data[c] + stats.epsilon);
    for (std::size_t r = 0; r < s; ++r)
      for (std::size_t c = 0; c < d; ++c) {
        const double xh = (xv.data[r * d + c] - mean.data[c]) * inv_std[c];
        xhat.data[r * d + c] = xh;
        out.data[r * d + c] = gv.data[c] * xh + bv.data[c];
      }

    return record(
        std::move(out),
        [this, x, gamma, beta, xhat = std::move(xhat),
         inv_std = std::move(inv_std), use_batch_stats, s, d](Var y) {
          const Tensor& gy = grads_[y];
          const Tensor& gv = values_[gamma];
          Tensor& gx = grads_[x];
          Tensor& gg = grads_[gamma];
          Tensor& gb = grads_[beta];
          for (std::size_t c = 0; c < d; ++c) {
            double sum_gy = 0.0, sum_gy_xhat = 0.0;
            for (std::size_t r = 0; r < s; ++r) {
              sum_gy += gy.data[r * d + c];
              sum_gy_xhat += gy.data[r * d + c] * xhat.data[r * d + c];
            }
            gb.data[c] += sum_gy;
            gg.data[c] += sum_gy_xhat;
            if (use_batch_stats) {
              const double sd = static_cast<double>(s);
              for (std::size_t r = 0; r < s; ++r) {
                const double dxhat = gy.data[r * d + c] * gv.data[c];
                gx.data[r * d + c] +=
                    inv_std[c] *
                    (dxhat - (gv.data[c] / sd) * sum_gy -
                     (gv.data[c] / sd) * xhat.data[r * d + c] * sum_gy_xhat);
              }
            } else {
              for (std::size_t r = 0; r < s; ++r)
                gx.data[r * d + c] +=
                    gy.data[r * d + c] * gv.data[c] * inv_std[c];
            }
          }
        });
  }

  // Elementwise helpers (used by tests and the robustness lab).
  Var add(Var a, Var b) {
    Tensor out = values_[a];
    for (std::size_t k = 0; k < out.data.size(); ++k)
      out.data[k] += values_[b].data[k];
    return record(std::move(out), [this, a, b](Var y) {
      for (std::size_t k = 0; k < grads_[y].data.size(); ++k) {
        grads_[a].data[k] += grads_[y].data[k];
        grads_[b].data[k] += grads_[y].data[k];
      }
    });
  }

  Var mul(Var a, Var b) {
    Tensor out = values_[a];
    for (std::size_t k = 0; k < out.data.size(); ++k)
      out.data[k] *= values_[b].data[k];
    return record(std::move(out), [this, a, b](Var y) {
      for (std::size_t k = 0; k < grads_[y].data.size(); ++k) {
        grads_[a].data[k] += grads_[y].data[k] * values_[b].data[k];
        grads_[b].data[k] += grads_[y].data[k] * values_[a].data[k];
      }
    });
  }

  Var scale(Var a, double s) {
    Tensor out = values_[a];
    for (auto& v : out.data) v *= s;
    return record(std::move(out), [this, a, s](Var y) {
      for (std::size_t k = 0; k < grads_[y].data.size(); ++k)
        grads_[a].data[k] += s * grads_[y].data[k];
    });
  }

  Var sum(Var a) {
    double s = 0.0;
    for (double v : values_[a].data) s += v;
    return record(Tensor::scalar(s), [this, a](Var y) {
      const double g = grads_[y].data[0];
      for (auto& v : grads_[a].data) v += g;
    });
  }

  // Numerically stable log-softmax over rows.
  Var log_softmax(Var x) {
    const Tensor& xv = values_[x];
    const std::size_t s = xv.rows(), d = xv.cols();
    Tensor out({s, d});
    for (std::size_t r = 0; r < s; ++r) {
      double mx = xv.data[r * d];
      for (std::size_t c = 1; c < d; ++c)
        mx = std::max(mx, xv.data[r * d + c]);
      double lse = 0.0;
      for (std::size_t c = 0; c < d; ++c)
        lse += std::exp(xv.data[r * d + c] - mx);
      lse = mx + std::log(lse);
      for (std::size_t c = 0; c < d; ++c)
        out.data[r * d + c] = xv.data[r * d + c] - lse;
    }
    return record(std::move(out), [this, x, s, d](Var y) {
      const Tensor& gy = grads_[y];
      const Tensor& yv = values_[y];
      Tensor& gx = grads_[x];
      for (std::size_t r = 0; r < s; ++r) {
        double total = 0.0;
        for (std::size_t c = 0; c < d; ++c) total += gy.data[r * d + c];
        for (std::size_t c = 0; c < d; ++c)
          gx.data[r * d + c] +=
              gy.data[r * d + c] - std::exp(yv.data[r * d + c]) * total;
      }
    });
  }

  // Custom node: forward value computed externally, backward supplied as a
  // gradient-propagating callback (receives d(out) and must accumulate into
  // grad(input) via add_grad).
  Var custom(Tensor value, std::function<void(Tape&, Var)> backward) {
    values_.push_back(std::move(value));
    nodes_.push_back(std::move(backward));
    return values_.size() - 1;
  }

  void add_grad(Var v, std::size_t flat_index, double g) {
    grads_[v].data[flat_index] += g;
  }
  const Tensor& grad_of(Var v) const { return grads_[v]; }

  // Backward from a scalar output.
  void backward(Var seed) {
    if (values_.at(seed).count() != 1)
      throw std::invalid_argument("backward: seed must be scalar");
    Tensor g = values_[seed];
    g.data[0] = 1.0;
    backward_with(seed, std::move(g));
  }

  // Backward with an explicit output gradient (e.g. assembled per-sample
  // seeds on a batched output).
  void backward_with(Var seed, Tensor seed_grad) {
    if (backward_done_) throw std::logic_error("backward: already run");
    if (seed >= values_.size())
      throw std::logic_error("backward: unknown seed");
    grads_.clear();
    grads_.reserve(values_.size());
    for (const auto& v : values_) grads_.emplace_back(Tensor(v.shape));
    if (seed_grad.count() != values_[seed].count())
      throw std::invalid_argument("backward: seed grad shape mismatch");
    grads_[seed] = std::move(seed_grad);
    for (std::size_t k = nodes_.size(); k-- > 0;)
      if (nodes_[k]) nodes_[k](*this, k);
    backward_done_ = true;
  }

  bool backward_done() const { return backward_done_; }
  int batch1_fallbacks() const { return batch1_fallbacks_; }

 private:
  Var record(Tensor out, std::function<void(Var)> bw) {
    values_.push_back(std::move(out));
    nodes_.push_back(
        [bw = std::move(bw)](Tape&, Var y) { bw(y); });
    return values_.size() - 1;
  }

  std::vector<Tensor> values_;
  std::vector<Tensor> grads_;
  std::vector<std::function<void(Tape&, Var)>> nodes_;
  bool backward_done_ = false;
  int batch1_fallbacks_ = 0;
};

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamHyper hyper;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;
  std::uint64_t skipped_nonfinite = 0;

  void init(const std::vector<Tensor*>& params, AdamHyper h) {
    hyper = h;
    m.clear();
    v.clear();
    for (const auto* p : params) {
      m.emplace_back(Tensor(p->shape));
      v.emplace_back(Tensor(p->shape));
    }
    step = 0;
  }
};

// Bias-corrected Adam. Non-finite gradients skip the update (counted).
inline void adam_step(const std::vector<Tensor*>& params,
                      const std::vector<const Tensor*>& grads,
                      AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw std::invalid_argument("adam_step: size mismatch");
  for (const auto* g : grads)
    for (double v : g->data)
      if (!std::isfinite(v)) {
        state.skipped_nonfinite++;
        state.step++;
        return;
      }
  state.step++;
  const double bc1 = 1.0 - std::pow(state.hyper.beta1,
                                    static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.hyper.beta2,
                                    static_cast<double>(state.step));
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& par = params[p]->data;
    const auto& g = grads[p]->data;
    auto& m = state.m[p].data;
    auto& v = state.v[p].data;
    for (std::size_t k = 0; k < par.size(); ++k) {
      m[k] = state.hyper.beta1 * m[k] + (1.0 - state.hyper.beta1) * g[k];
      v[k] = state.hyper.beta2 * v[k] + (1.0 - state.hyper.beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      par[k] -= state.hyper.lr * mhat / (std::sqrt(vhat) + state.hyper.epsilon);
    }
  }
}

}  // namespace cfnet::ad
