#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfnet/autodiff.hpp"
#include "cfnet/channel.hpp"
#include "cfnet/checkpoint.hpp"
#include "cfnet/rng.hpp"
#include "cfnet/system_model.hpp"

namespace cfnet {

enum class DecisionMode { kThreshold, kPerSubcarrierArgmax };

struct OutputMapping {
  double w_scale = 0.0;      // sqrt-watts; default set from SystemConfig
  double beta_floor = 1e-3;  // keeps 1/beta^2 bounded
};

inline double default_w_scale(const SystemConfig& sys, double c = 2.0) {
  return c * std::sqrt(sys.p_max / (double(sys.n) * sys.i * sys.mt));
}

// Sigmoid-head policy network of the 512/1024/512 trunk. Output vector is
// partitioned as [w block (re,im interleaved) | v block | beta block].
struct PolicyNetworkSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden = {512, 1024, 512};
  std::size_t w_real_count = 0;  // 2 * (#complex beamformer entries)
  std::size_t v_count = 0;
  std::size_t beta_count = 0;
  OutputMapping mapping;
  DecisionMode decision_mode = DecisionMode::kThreshold;
  bool straight_through = true;
  // Local (per-SBS) specs cover a single SBS slice of the allocation.
  std::size_t sbs_count = 1;  // 1 for local specs, B for the global spec

  std::size_t output_dim() const { return w_real_count + v_count + beta_count; }
};

inline PolicyNetworkSpec cmtssl_spec(const SystemConfig& sys) {
  PolicyNetworkSpec s;
  const auto d = sys.dims();
  s.input_dim = 2ull * d.b * d.n * d.i * d.mt * d.mr;
  s.w_real_count = 2ull * d.b * d.n * d.i * d.mt;
  s.v_count = std::size_t(d.b) * d.n * d.i;
  s.beta_count = sys.task_count();
  s.mapping.w_scale = default_w_scale(sys);
  s.sbs_count = d.b;
  return s;
}

inline PolicyNetworkSpec dmtssl_spec(const SystemConfig& sys) {
  PolicyNetworkSpec s;
  const auto d = sys.dims();
  s.input_dim = 2ull * d.n * d.i * d.mt * d.mr;
  s.w_real_count = 2ull * d.n * d.i * d.mt;
  s.v_count = std::size_t(d.n) * d.i;
  s.beta_count = sys.task_count();
  s.mapping.w_scale = default_w_scale(sys);
  s.sbs_count = 1;
  return s;
}

// Interleaved (re, im) flattening in [b][n][i][tx][rx] order.
inline std::vector<double> flatten_channel(
    const std::vector<std::complex<double>>& coeffs) {
  std::vector<double> out(coeffs.size() * 2);
  for (std::size_t k = 0; k < coeffs.size(); ++k) {
    out[2 * k] = coeffs[k].real();
    out[2 * k + 1] = coeffs[k].imag();
  }
  return out;
}

inline std::vector<std::complex<double>> unflatten_channel(
    const std::vector<double>& flat) {
  std::vector<std::complex<double>> out(flat.size() / 2);
  for (std::size_t k = 0; k < out.size(); ++k)
    out[k] = {flat[2 * k], flat[2 * k + 1]};
  return out;
}

struct PolicyOutputs {
  std::vector<std::complex<double>> w;  // complex beamformer entries
  std::vector<double> v_relaxed;        // in (0,1)
  LossWeights beta;                     // floored at beta_floor
};

// Maps raw sigmoid outputs s in (0,1): w = (2s-1)*w_scale per real channel,
// v = s, beta = max(s, floor).
inline PolicyOutputs map_outputs(const PolicyNetworkSpec& spec,
                                 const double* raw) {
  PolicyOutputs out;
  const std::size_t wc = spec.w_real_count / 2;
  out.w.resize(wc);
  for (std::size_t k = 0; k < wc; ++k)
    out.w[k] = {(2.0 * raw[2 * k] - 1.0) * spec.mapping.w_scale,
                (2.0 * raw[2 * k + 1] - 1.0) * spec.mapping.w_scale};
  out.v_relaxed.assign(raw + spec.w_real_count,
                       raw + spec.w_real_count + spec.v_count);
  out.beta.resize(spec.beta_count);
  const double* braw = raw + spec.w_real_count + spec.v_count;
  for (std::size_t k = 0; k < spec.beta_count; ++k)
    out.beta[k] = std::max(braw[k], spec.mapping.beta_floor);
  return out;
}

// Chains gradients on the mapped outputs back to the raw sigmoid outputs.
// The decision layer is treated as identity (straight-through).
inline void seed_raw_grads(const PolicyNetworkSpec& spec, const double* raw,
                           const std::vector<std::complex<double>>& d_w,
                           const std::vector<double>& d_v,
                           const std::vector<double>& d_beta, double* out) {
  const double ws2 = 2.0 * spec.mapping.w_scale;
  for (std::size_t k = 0; k < d_w.size(); ++k) {
    out[2 * k] = d_w[k].real() * ws2;
    out[2 * k + 1] = d_w[k].imag() * ws2;
  }
  for (std::size_t k = 0; k < spec.v_count; ++k)
    out[spec.w_real_count + k] = d_v[k];
  const double* braw = raw + spec.w_real_count + spec.v_count;
  for (std::size_t k = 0; k < spec.beta_count; ++k)
    out[spec.w_real_count + spec.v_count + k] =
        braw[k] > spec.mapping.beta_floor ? d_beta[k] : 0.0;
}

// Binarizing decision layer. v_relaxed is laid out [b][n][i] (or [n][i] for
// a local model with users_per_group = I).
inline std::vector<double> decision_layer(const std::vector<double>& v_relaxed,
                                          DecisionMode mode,
                                          std::size_t users_per_group) {
  std::vector<double> v(v_relaxed.size(), 0.0);
  if (mode == DecisionMode::kThreshold) {
    for (std::size_t k = 0; k < v.size(); ++k)
      v[k] = v_relaxed[k] >= 0.5 ? 1.0 : 0.0;
    return v;
  }
  if (users_per_group == 0 || v_relaxed.size() % users_per_group != 0)
    throw std::invalid_argument("decision_layer: bad group size");
  for (std::size_t g = 0; g < v_relaxed.size(); g += users_per_group) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < users_per_group; ++i)
      if (v_relaxed[g + i] > v_relaxed[g + best]) best = i;
    v[g + best] = 1.0;
  }
  return v;
}

// Dense trunk with per-layer batch normalization and ReLU, sigmoid head.
class PolicyModel {
 public:
  PolicyModel() = default;
  PolicyModel(PolicyNetworkSpec spec, std::uint64_t init_seed)
      : spec_(std::move(spec)) {
    Rng rng(Rng::derive(init_seed, 0x90DE1ULL));
    std::size_t in = spec_.input_dim;
    for (std::size_t h : spec_.hidden) {
      layers_.push_back(make_layer(in, h, rng));
      in = h;
    }
    out_w_ = xavier({in, spec_.output_dim()}, rng);
    out_b_ = ad::Tensor({spec_.output_dim()});
  }

  const PolicyNetworkSpec& spec() const { return spec_; }

  // Forward through the trunk; returns the raw sigmoid output Var.
  ad::Tape::Var forward(ad::Tape& tape, ad::Tensor x_batch, bool train) {
    auto x = tape.leaf(std::move(x_batch));
    layer_vars_.clear();
    for (auto& layer : layers_) {
      LayerVars lv;
      lv.w = tape.leaf(layer.w);
      lv.b = tape.leaf(layer.b);
      lv.gamma = tape.leaf(layer.gamma);
      lv.beta = tape.leaf(layer.beta);
      auto a = tape.affine(x, lv.w, lv.b);
      auto bn = tape.batchnorm(a, lv.gamma, lv.beta, layer.stats, train);
      x = tape.relu(bn);
      layer_vars_.push_back(lv);
    }
    out_w_var_ = tape.leaf(out_w_);
    out_b_var_ = tape.leaf(out_b_);
    auto logits = tape.affine(x, out_w_var_, out_b_var_);
    return tape.sigmoid(logits);
  }

  // Applies one Adam step from the gradients recorded on `tape` by a
  // completed backward pass over the vars of the latest forward.
  void apply_gradients(const ad::Tape& tape) {
    std::vector<ad::Tensor*> params;
    std::vector<const ad::Tensor*> grads;
    collect(params);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      grads.push_back(&tape.grad(layer_vars_[l].w));
      grads.push_back(&tape.grad(layer_vars_[l].b));
      grads.push_back(&tape.grad(layer_vars_[l].gamma));
      grads.push_back(&tape.grad(layer_vars_[l].beta));
    }
    grads.push_back(&tape.grad(out_w_var_));
    grads.push_back(&tape.grad(out_b_var_));
    if (opt_.m.empty()) opt_.init(params, opt_.hyper);
    ad::adam_step(params, grads, opt_);
  }

  // Copies the gradients of the latest forward's parameters off `tape`, in
  // the same order apply_gradients consumes them.
  std::vector<ad::Tensor> gradient_snapshot(const ad::Tape& tape) const {
    std::vector<ad::Tensor> out;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      out.push_back(tape.grad(layer_vars_[l].w));
      out.push_back(tape.grad(layer_vars_[l].b));
      out.push_back(tape.grad(layer_vars_[l].gamma));
      out.push_back(tape.grad(layer_vars_[l].beta));
    }
    out.push_back(tape.grad(out_w_var_));
    out.push_back(tape.grad(out_b_var_));
    return out;
  }

  void set_learning_rate(double lr) { opt_.hyper.lr = lr; }
  ad::AdamState& optimizer() { return opt_; }

  std::size_t parameter_count() const {
    std::size_t c = 0;
    for (const auto& l : layers_)
      c += l.w.count() + l.b.count() + l.gamma.count() + l.beta.count();
    return c + out_w_.count() + out_b_.count();
  }

  // 2 x multiply-accumulate count of the dense trunk, per input sample.
  std::size_t flops_per_sample() const {
    std::size_t macs = 0;
    std::size_t in = spec_.input_dim;
    for (std::size_t h : spec_.hidden) {
      macs += in * h;
      in = h;
    }
    macs += in * spec_.output_dim();
    return 2 * macs;
  }

  std::map<std::string, ad::Tensor> named_tensors() const {
    std::map<std::string, ad::Tensor> m;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      m[p + "w"] = layers_[l].w;
      m[p + "b"] = layers_[l].b;
      m[p + "bn_gamma"] = layers_[l].gamma;
      m[p + "bn_beta"] = layers_[l].beta;
      m[p + "bn_mean"] = layers_[l].stats.mean;
      m[p + "bn_var"] = layers_[l].stats.var;
      m[p + "bn_init"] =
          ad::Tensor::scalar(layers_[l].stats.initialized ? 1.0 : 0.0);
    }
    m["out.w"] = out_w_;
    m["out.b"] = out_b_;
    return m;
  }

  void load_tensors(const std::map<std::string, ad::Tensor>& m) {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      layers_[l].w = m.at(p + "w");
      layers_[l].b = m.at(p + "b");
      layers_[l].gamma = m.at(p + "bn_gamma");
      layers_[l].beta = m.at(p + "bn_beta");
      layers_[l].stats.mean = m.at(p + "bn_mean");
      layers_[l].stats.var = m.at(p + "bn_var");
      layers_[l].stats.initialized = m.at(p + "bn_init").data[0] != 0.0;
    }
    out_w_ = m.at("out.w");
    out_b_ = m.at("out.b");
  }

 private:
  struct Layer {
    ad::Tensor w, b, gamma, beta;
    ad::BatchNormRunningStats stats;
  };
  struct LayerVars {
    ad::Tape::Var w = 0, b = 0, gamma = 0, beta = 0;
  };

  static ad::Tensor xavier(std::vector<std::size_t> shape, Rng& rng) {
    ad::Tensor t(shape);
    const double bound =
        std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
    for (auto& v : t.data) v = rng.uniform(-bound, bound);
    return t;
  }

  static Layer make_layer(std::size_t in, std::size_t out, Rng& rng) {
    Layer l;
    l.w = xavier({in, out}, rng);
    l.b = ad::Tensor({out});
    l.gamma = ad::Tensor({out});
    for (auto& v : l.gamma.data) v = 1.0;
    l.beta = ad::Tensor({out});
    l.stats = ad::BatchNormRunningStats(out);
    return l;
  }

  void collect(std::vector<ad::Tensor*>& params) {
    for (auto& l : layers_) {
      params.push_back(&l.w);
      params.push_back(&l.b);
      params.push_back(&l.gamma);
      params.push_back(&l.beta);
    }
    params.push_back(&out_w_);
    params.push_back(&out_b_);
  }

  PolicyNetworkSpec spec_;
  std::vector<Layer> layers_;
  ad::Tensor out_w_, out_b_;
  std::vector<LayerVars> layer_vars_;
  ad::Tape::Var out_w_var_ = 0, out_b_var_ = 0;
  ad::AdamState opt_;
};

}  // namespace cfnet
