#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfnet/autodiff.hpp"
#include "cfnet/channel.hpp"
#include "cfnet/losses.hpp"
#include "cfnet/policy.hpp"
#include "cfnet/rate_graph.hpp"
#include "cfnet/rng.hpp"
#include "cfnet/system_model.hpp"

namespace cfnet {

struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch = 100;
  double lr = 1e-2;  // gamma_C; DMTSSL default is 1e-3
  LossScheme scheme = LossScheme::kS1;
  LossHyper hyper;
  std::uint64_t seed = 1;
  std::size_t eval_every = 0;  // 0 disables periodic evaluation
  DecisionMode decision_mode = DecisionMode::kThreshold;
};

struct StepMetrics {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double joint_loss = 0.0;
  double f_mean = 0.0;
  double g_violation_frac = 0.0;
  double l_abs_mean = 0.0;
  double wall_ms = 0.0;
};

struct EvalMetrics {
  double mean_weighted_sum_rate = 0.0;
  std::vector<double> per_user_rate_mean;
  double rate_violation_fraction = 0.0;
  std::vector<double> per_sbs_power_mean;
  double l_abs_mean = 0.0;
  std::size_t flops_per_decision = 0;
};

// Either one centralized model or B per-SBS models.
struct PolicySet {
  std::vector<PolicyModel> models;
  bool distributed = false;
};

inline EvalMetrics evaluate_policy(PolicySet& policy,
                                   const ChannelDataset& test_ds,
                                   const SystemConfig& sys, DecisionMode mode);

namespace detail {

inline std::uint64_t model_init_seed(std::uint64_t seed, std::size_t b) {
  return Rng::derive(seed, 0x1000 + b);
}

// Fixed 10% holdout used for periodic evaluation when eval_every > 0.
// Returns the number of leading samples used for training.
inline std::size_t holdout_split(const ChannelDataset& ds,
                                 const TrainConfig& cfg,
                                 ChannelDataset& holdout) {
  if (cfg.eval_every == 0 || ds.samples.size() < 10) return ds.samples.size();
  const std::size_t train_count = ds.samples.size() - ds.samples.size() / 10;
  holdout.dims = ds.dims;
  holdout.config_fingerprint = ds.config_fingerprint;
  holdout.samples.assign(ds.samples.begin() + train_count, ds.samples.end());
  return train_count;
}

// Epoch-shuffled mini-batch index stream shared by both trainers.
class BatchSampler {
 public:
  BatchSampler(std::size_t dataset_size, std::size_t batch,
               std::uint64_t seed)
      : size_(dataset_size), batch_(std::min(batch, dataset_size)),
        rng_(Rng::derive(seed, 0x5A3B1E)) {
    perm_.resize(size_);
    std::iota(perm_.begin(), perm_.end(), std::size_t{0});
  }

  std::size_t steps_per_epoch() const { return size_ / batch_; }
  std::size_t batch_size() const { return batch_; }

  void start_epoch() {
    for (std::size_t k = size_; k > 1; --k)
      std::swap(perm_[k - 1], perm_[rng_.uniform_index(k)]);
    cursor_ = 0;
  }

  std::vector<std::size_t> next_batch() {
    std::vector<std::size_t> ids(perm_.begin() + cursor_,
                                 perm_.begin() + cursor_ + batch_);
    cursor_ += batch_;
    return ids;
  }

 private:
  std::size_t size_, batch_, cursor_ = 0;
  std::vector<std::size_t> perm_;
  Rng rng_;
};

struct SamplePipelineResult {
  TaskValues tv;
  TaskLossVector tl;
  LossWeights beta;
  double joint = 0.0;
  // Gradients of the joint loss w.r.t. the mapped outputs.
  std::vector<std::complex<double>> d_w;
  std::vector<double> d_v;
  std::vector<double> d_beta;
  int clamp_events = 0;
};

// Task values -> scheme losses -> joint loss -> gradients back to the
// allocation, for one sample. `beta` may come from the sample itself
// (CMTSSL) or from aggregation (DMTSSL).
inline SamplePipelineResult loss_pipeline(const ChannelSample& h,
                                          const std::vector<std::complex<double>>& w,
                                          const std::vector<double>& v_hard,
                                          LossWeights beta,
                                          const SystemConfig& sys,
                                          const TrainConfig& cfg) {
  SamplePipelineResult r;
  r.beta = std::move(beta);
  RateGraph graph(h, w, v_hard, sys);
  r.tv = graph.values();
  r.tl = scheme_losses(r.tv, cfg.scheme, cfg.hyper);
  r.clamp_events = r.tl.clamp_events;
  const std::size_t k_tasks = sys.task_count();
  r.joint = joint_loss(r.tl, r.beta, k_tasks);
  const auto jg = joint_loss_grads(r.tl, r.beta, k_tasks);

  // Chain d(joint)/d(task value) = d(joint)/dL_k * dL_k/d(task).
  const double d_f = jg.d_loss[0] * r.tl.dl0;
  std::vector<double> d_g(sys.i), d_l(sys.b);
  for (std::size_t i = 0; i < sys.i; ++i)
    d_g[i] = jg.d_loss[1 + i] * r.tl.dl1[i];
  for (std::size_t b = 0; b < sys.b; ++b)
    d_l[b] = jg.d_loss[1 + sys.i + b] * r.tl.dl2[b];

  auto grads = graph.backward(d_f, d_g, d_l);
  r.d_w = std::move(grads.d_w);
  r.d_v = std::move(grads.d_v);
  r.d_beta = jg.d_beta;
  return r;
}

inline void accumulate_step_metrics(StepMetrics& m,
                                    const SamplePipelineResult& r,
                                    const SystemConfig& sys,
                                    std::size_t batch) {
  const double inv = 1.0 / static_cast<double>(batch);
  m.joint_loss += r.joint * inv;
  m.f_mean += r.tv.f * inv;
  double viol = 0.0;
  for (double g : r.tv.g)
    if (g > 0.0) viol += 1.0;
  m.g_violation_frac += viol / static_cast<double>(sys.i) * inv;
  double labs = 0.0;
  for (double l : r.tv.l) labs += std::abs(l);
  m.l_abs_mean += labs / static_cast<double>(sys.b) * inv;
}

}  // namespace detail

struct CmtsslResult {
  PolicyModel model;
  std::vector<StepMetrics> metrics;
  std::vector<std::pair<std::size_t, EvalMetrics>> eval_points;
  std::size_t skipped_steps = 0;
  std::size_t b2_clamp_events = 0;
};

// Centralized trainer: one model over the full channel matrix.
inline CmtsslResult train_cmtssl(const ChannelDataset& ds,
                                 const TrainConfig& cfg,
                                 const SystemConfig& sys) {
  if (!(ds.dims == sys.dims()))
    throw std::invalid_argument("train_cmtssl: dataset dims mismatch");
  CmtsslResult res;
  auto spec = cmtssl_spec(sys);
  spec.decision_mode = cfg.decision_mode;
  res.model = PolicyModel(spec, detail::model_init_seed(cfg.seed, 0));
  res.model.set_learning_rate(cfg.lr);
  if (ds.samples.empty() || cfg.epochs == 0) return res;

  ChannelDataset holdout;
  const std::size_t train_count = detail::holdout_split(ds, cfg, holdout);
  detail::BatchSampler sampler(train_count, cfg.batch, cfg.seed);
  const std::size_t s_batch = sampler.batch_size();
  const auto d = sys.dims();
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    sampler.start_epoch();
    for (std::size_t l = 0; l < sampler.steps_per_epoch(); ++l, ++step) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto ids = sampler.next_batch();

      ad::Tensor x({s_batch, spec.input_dim});
      for (std::size_t s = 0; s < s_batch; ++s) {
        const auto flat = flatten_channel(ds.samples[ids[s]].coefficients);
        std::copy(flat.begin(), flat.end(),
                  x.data.begin() + s * spec.input_dim);
      }

      ad::Tape tape;
      const auto raw_var = res.model.forward(tape, std::move(x), true);
      const ad::Tensor& raw = tape.value(raw_var);

      ad::Tensor seed({s_batch, spec.output_dim()});
      StepMetrics m;
      m.step = step;
      m.epoch = epoch;
      bool finite = true;
      for (std::size_t s = 0; s < s_batch && finite; ++s) {
        const double* row = raw.data.data() + s * spec.output_dim();
        auto po = map_outputs(spec, row);
        const auto v_hard =
            decision_layer(po.v_relaxed, spec.decision_mode, d.i);
        detail::SamplePipelineResult pr;
        try {
          pr = detail::loss_pipeline(ds.samples[ids[s]], po.w, v_hard,
                                     po.beta, sys, cfg);
        } catch (const ad::NumericError&) {
          finite = false;
          break;
        }
        if (!std::isfinite(pr.joint)) {
          finite = false;
          break;
        }
        res.b2_clamp_events += pr.clamp_events;
        detail::accumulate_step_metrics(m, pr, sys, s_batch);
        // Mini-batch average: each sample contributes 1/S. Multiplying by
        // the reciprocal keeps the arithmetic identical to the distributed
        // feedback path.
        const double inv_s = 1.0 / static_cast<double>(s_batch);
        for (auto& g : pr.d_w) g *= inv_s;
        for (auto& g : pr.d_v) g *= inv_s;
        for (auto& g : pr.d_beta) g *= inv_s;
        seed_raw_grads(spec, row, pr.d_w, pr.d_v, pr.d_beta,
                       seed.data.data() + s * spec.output_dim());
      }
      m.wall_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
      if (!finite) {
        res.skipped_steps++;
        res.metrics.push_back(m);
        continue;
      }
      tape.backward_with(raw_var, std::move(seed));
      res.model.apply_gradients(tape);
      res.metrics.push_back(m);
      if (cfg.eval_every > 0 && !holdout.samples.empty() &&
          (step + 1) % cfg.eval_every == 0) {
        PolicySet ps;
        ps.models.push_back(res.model);
        ps.distributed = false;
        res.eval_points.emplace_back(
            step, evaluate_policy(ps, holdout, sys, spec.decision_mode));
      }
    }
  }
  return res;
}

// Eq. (21): beta = (1/B) sum_b omega_b beta_b.
inline LossWeights aggregate_beta(const std::vector<LossWeights>& betas,
                                  const std::vector<double>& omega) {
  if (betas.empty() || betas.size() != omega.size())
    throw std::invalid_argument("aggregate_beta: size mismatch");
  const std::size_t k = betas[0].size();
  LossWeights out(k, 0.0);
  for (std::size_t b = 0; b < betas.size(); ++b) {
    if (betas[b].size() != k)
      throw ShapeError("aggregate_beta: length mismatch");
    for (std::size_t j = 0; j < k; ++j) out[j] += omega[b] * betas[b][j];
  }
  for (auto& v : out) v /= static_cast<double>(betas.size());
  return out;
}

// --- DMTSSL bus protocol -------------------------------------------------

struct BusMessage {
  enum class Kind { kIndexBroadcast, kUpload, kLossFeedback };
  Kind kind;
  std::size_t step = 0;
  std::size_t sbs = 0;                    // UPLOAD only
  std::vector<std::size_t> sample_ids;    // INDEX_BROADCAST / UPLOAD
  double loss_value = 0.0;                // LOSS_FEEDBACK
};

struct BusTraceRecord {
  BusMessage::Kind kind;
  std::size_t step;
  std::size_t sbs;
};

// Per-sample upload payload from one SBS.
struct SbsUpload {
  std::vector<std::vector<std::complex<double>>> w;   // per sample
  std::vector<std::vector<double>> v_relaxed;         // per sample
  std::vector<std::vector<double>> v_hard;            // per sample
  std::vector<LossWeights> beta;                      // per sample
  std::vector<std::vector<double>> h_flat;            // per sample H^b
};

// Per-SBS output gradients carried by LOSS_FEEDBACK.
struct SbsFeedback {
  std::vector<std::vector<std::complex<double>>> d_w;  // per sample
  std::vector<std::vector<double>> d_v;                // per sample
  std::vector<std::vector<double>> d_beta;             // per sample
};

struct DmtsslResult {
  std::vector<PolicyModel> models;
  std::vector<StepMetrics> metrics;
  std::vector<std::pair<std::size_t, EvalMetrics>> eval_points;
  std::size_t skipped_steps = 0;
  std::size_t b2_clamp_events = 0;
  std::vector<BusTraceRecord> bus_trace;
};

// Gradient snapshot of one model, for the distributed-equals-monolithic
// check.
struct ModelGradients {
  std::vector<ad::Tensor> tensors;
};

class DistributedTrainer {
 public:
  DistributedTrainer(const ChannelDataset& ds, const TrainConfig& cfg,
                     const SystemConfig& sys)
      : ds_(&ds), cfg_(cfg), sys_(sys),
        train_count_(detail::holdout_split(ds, cfg, holdout_)),
        sampler_(train_count_, cfg.batch, cfg.seed) {
    if (!(ds.dims == sys.dims()))
      throw std::invalid_argument("train_dmtssl: dataset dims mismatch");
    local_spec_ = dmtssl_spec(sys);
    local_spec_.decision_mode = cfg.decision_mode;
    for (std::size_t b = 0; b < sys.b; ++b) {
      workers_.emplace_back();
      workers_[b].model =
          PolicyModel(local_spec_, detail::model_init_seed(cfg.seed, b));
      workers_[b].model.set_learning_rate(cfg.lr);
      workers_[b].local = slice_local(ds, b);
    }
  }

  // Local datasets must all be aligned slices of the same global dataset:
  // same sample count and ordering.
  static void check_alignment(
      const std::vector<LocalChannelDataset>& locals) {
    if (locals.empty())
      throw std::invalid_argument("train_dmtssl: no local datasets");
    for (std::size_t b = 0; b < locals.size(); ++b) {
      if (locals[b].samples.size() != locals[0].samples.size() ||
          !(locals[b].dims == locals[0].dims) || locals[b].sbs_index != b)
        throw std::invalid_argument(
            "train_dmtssl: local datasets misaligned at SBS " +
            std::to_string(b));
    }
  }

  DmtsslResult train() {
    DmtsslResult res;
    if (ds_->samples.empty() || cfg_.epochs == 0) {
      finish(res);
      return res;
    }
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
      sampler_.start_epoch();
      for (std::size_t l = 0; l < sampler_.steps_per_epoch(); ++l, ++step)
        run_step(step, epoch, res, true, nullptr);
    }
    finish(res);
    return res;
  }

  // Executes one protocol round. When `apply` is false the Adam update is
  // skipped and the per-SBS gradients are returned via `grads_out`.
  void run_step(std::size_t step, std::size_t epoch, DmtsslResult& res,
                bool apply, std::vector<ModelGradients>* grads_out) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t s_batch = sampler_.batch_size();
    const auto ids = sampler_.next_batch();
    const auto d = sys_.dims();

    // INDEX_BROADCAST: the coordinator fixes the sample set for all SBSs.
    res.bus_trace.push_back({BusMessage::Kind::kIndexBroadcast, step, 0});

    // Each SBS forwards its local slice and uploads outputs.
    std::vector<SbsUpload> uploads(sys_.b);
    std::size_t uploads_this_step = 0;
    for (std::size_t b = 0; b < sys_.b; ++b) {
      uploads[b] = workers_[b].forward_batch(local_spec_, ids, d, true);
      res.bus_trace.push_back({BusMessage::Kind::kUpload, step, b});
      ++uploads_this_step;
    }
    if (uploads_this_step != sys_.b)
      throw ProtocolError("dmtssl: round must contain exactly B uploads");

    // MBS: concatenate, aggregate beta (omega_b = 1), compute the joint
    // loss and the per-SBS output gradients.
    StepMetrics m;
    m.step = step;
    m.epoch = epoch;
    std::vector<SbsFeedback> feedback(sys_.b);
    for (std::size_t b = 0; b < sys_.b; ++b) {
      feedback[b].d_w.resize(s_batch);
      feedback[b].d_v.resize(s_batch);
      feedback[b].d_beta.resize(s_batch);
    }
    const std::size_t w_per_sbs = std::size_t(d.n) * d.i * d.mt;
    const std::size_t v_per_sbs = std::size_t(d.n) * d.i;
    const std::vector<double> omega(sys_.b, 1.0);
    bool finite = true;
    for (std::size_t s = 0; s < s_batch && finite; ++s) {
      std::vector<std::complex<double>> w(std::size_t(sys_.b) * w_per_sbs);
      std::vector<double> v_hard(std::size_t(sys_.b) * v_per_sbs);
      std::vector<LossWeights> betas(sys_.b);
      for (std::size_t b = 0; b < sys_.b; ++b) {
        std::copy(uploads[b].w[s].begin(), uploads[b].w[s].end(),
                  w.begin() + b * w_per_sbs);
        std::copy(uploads[b].v_hard[s].begin(), uploads[b].v_hard[s].end(),
                  v_hard.begin() + b * v_per_sbs);
        betas[b] = uploads[b].beta[s];
      }
      const LossWeights beta = aggregate_beta(betas, omega);
      detail::SamplePipelineResult pr;
      try {
        pr = detail::loss_pipeline(ds_->samples[ids[s]], w, v_hard, beta,
                                   sys_, cfg_);
      } catch (const ad::NumericError&) {
        finite = false;
        break;
      }
      if (!std::isfinite(pr.joint)) {
        finite = false;
        break;
      }
      res.b2_clamp_events += pr.clamp_events;
      detail::accumulate_step_metrics(m, pr, sys_, s_batch);
      const double inv_s = 1.0 / static_cast<double>(s_batch);
      const double beta_chain =
          inv_s / static_cast<double>(sys_.b);  // d(beta)/d(beta^b), omega=1
      for (std::size_t b = 0; b < sys_.b; ++b) {
        auto& fb = feedback[b];
        fb.d_w[s].assign(pr.d_w.begin() + b * w_per_sbs,
                         pr.d_w.begin() + (b + 1) * w_per_sbs);
        fb.d_v[s].assign(pr.d_v.begin() + b * v_per_sbs,
                         pr.d_v.begin() + (b + 1) * v_per_sbs);
        for (auto& g : fb.d_w[s]) g *= inv_s;
        for (auto& g : fb.d_v[s]) g *= inv_s;
        fb.d_beta[s].resize(pr.d_beta.size());
        for (std::size_t k = 0; k < pr.d_beta.size(); ++k)
          fb.d_beta[s][k] = pr.d_beta[k] * beta_chain;
      }
    }
    m.wall_ms = std::chrono::duration<double, std::milli>(
                    std::chrono::steady_clock::now() - t0)
                    .count();

    if (!finite) {
      res.skipped_steps++;
      res.metrics.push_back(m);
      // Round still closes with a feedback message.
      res.bus_trace.push_back({BusMessage::Kind::kLossFeedback, step, 0});
      for (auto& wk : workers_) wk.drop_tape();
      return;
    }

    // LOSS_FEEDBACK: broadcast loss value + per-SBS output gradients.
    res.bus_trace.push_back({BusMessage::Kind::kLossFeedback, step, 0});
    if (grads_out) grads_out->resize(sys_.b);
    for (std::size_t b = 0; b < sys_.b; ++b) {
      workers_[b].backprop(local_spec_, uploads[b], feedback[b], apply,
                           grads_out ? &(*grads_out)[b] : nullptr);
    }
    res.metrics.push_back(m);
    if (apply && cfg_.eval_every > 0 && !holdout_.samples.empty() &&
        (step + 1) % cfg_.eval_every == 0) {
      PolicySet ps;
      for (auto& w : workers_) ps.models.push_back(w.model);
      ps.distributed = true;
      res.eval_points.emplace_back(
          step,
          evaluate_policy(ps, holdout_, sys_, local_spec_.decision_mode));
    }
  }

  PolicyModel& model(std::size_t b) { return workers_.at(b).model; }
  LocalChannelDataset& local_slice(std::size_t b) {
    return workers_.at(b).local;
  }
  void start_epoch() { sampler_.start_epoch(); }

  void finish(DmtsslResult& res) {
    res.models.clear();
    for (auto& w : workers_) res.models.push_back(w.model);
  }

 private:
  struct Worker {
    PolicyModel model;
    LocalChannelDataset local;
    std::unique_ptr<ad::Tape> tape;
    ad::Tape::Var raw_var = 0;
    std::vector<std::size_t> current_ids;

    SbsUpload forward_batch(const PolicyNetworkSpec& spec,
                            const std::vector<std::size_t>& ids,
                            const ChannelDims& d, bool train) {
      current_ids = ids;
      const std::size_t s_batch = ids.size();
      ad::Tensor x({s_batch, spec.input_dim});
      SbsUpload up;
      up.h_flat.resize(s_batch);
      for (std::size_t s = 0; s < s_batch; ++s) {
        up.h_flat[s] = flatten_channel(local.samples[ids[s]]);
        std::copy(up.h_flat[s].begin(), up.h_flat[s].end(),
                  x.data.begin() + s * spec.input_dim);
      }
      tape = std::make_unique<ad::Tape>();
      raw_var = model.forward(*tape, std::move(x), train);
      const ad::Tensor& raw = tape->value(raw_var);
      up.w.resize(s_batch);
      up.v_relaxed.resize(s_batch);
      up.v_hard.resize(s_batch);
      up.beta.resize(s_batch);
      for (std::size_t s = 0; s < s_batch; ++s) {
        const double* row = raw.data.data() + s * spec.output_dim();
        auto po = map_outputs(spec, row);
        up.v_hard[s] = decision_layer(po.v_relaxed, spec.decision_mode, d.i);
        up.w[s] = std::move(po.w);
        up.v_relaxed[s] = std::move(po.v_relaxed);
        up.beta[s] = std::move(po.beta);
      }
      return up;
    }

    void backprop(const PolicyNetworkSpec& spec, const SbsUpload& up,
                  const SbsFeedback& fb, bool apply, ModelGradients* out) {
      const std::size_t s_batch = fb.d_w.size();
      const ad::Tensor& raw = tape->value(raw_var);
      ad::Tensor seed({s_batch, spec.output_dim()});
      for (std::size_t s = 0; s < s_batch; ++s) {
        const double* row = raw.data.data() + s * spec.output_dim();
        seed_raw_grads(spec, row, fb.d_w[s], fb.d_v[s], fb.d_beta[s],
                       seed.data.data() + s * spec.output_dim());
      }
      tape->backward_with(raw_var, std::move(seed));
      if (out) out->tensors = model.gradient_snapshot(*tape);
      if (apply) model.apply_gradients(*tape);
      drop_tape();
    }

    void drop_tape() { tape.reset(); }
  };

  const ChannelDataset* ds_;
  TrainConfig cfg_;
  SystemConfig sys_;
  ChannelDataset holdout_;
  std::size_t train_count_;
  detail::BatchSampler sampler_;
  PolicyNetworkSpec local_spec_;
  std::vector<Worker> workers_;
};

inline DmtsslResult train_dmtssl(const ChannelDataset& ds,
                                 const TrainConfig& cfg,
                                 const SystemConfig& sys) {
  DistributedTrainer trainer(ds, cfg, sys);
  return trainer.train();
}

// --- DATL -----------------------------------------------------------------

struct DatlResult {
  PolicyModel model;
  std::size_t source_index = 0;
  std::size_t gradient_steps = 0;  // always 0: pure model copy
};

// Copies the model of the geographically nearest SBS (2-D distance, ties to
// the lowest index). No training occurs.
inline DatlResult datl_transfer(const std::vector<PolicyModel>& models,
                                const Topology& topo, double new_x,
                                double new_y) {
  if (models.empty() || topo.sbs_positions.size() != models.size())
    throw std::invalid_argument("datl_transfer: need >= 1 source model");
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t b = 0; b < topo.sbs_positions.size(); ++b) {
    const double dx = topo.sbs_positions[b].x - new_x;
    const double dy = topo.sbs_positions[b].y - new_y;
    const double dist = std::sqrt(dx * dx + dy * dy);
    if (dist < best_d) {
      best_d = dist;
      best = b;
    }
  }
  DatlResult r;
  r.model = models[best];  // deep copy (value semantics)
  r.source_index = best;
  return r;
}

// --- Evaluation ------------------------------------------------------------

inline EvalMetrics evaluate_policy(PolicySet& policy,
                                   const ChannelDataset& test_ds,
                                   const SystemConfig& sys,
                                   DecisionMode mode) {
  const auto d = sys.dims();
  EvalMetrics em;
  em.per_user_rate_mean.assign(sys.i, 0.0);
  em.per_sbs_power_mean.assign(sys.b, 0.0);
  if (test_ds.samples.empty()) return em;

  const std::size_t s_count = test_ds.samples.size();
  const std::size_t w_per_sbs = std::size_t(d.n) * d.i * d.mt;
  const std::size_t v_per_sbs = std::size_t(d.n) * d.i;

  // Forward all models over the test set in eval mode.
  std::vector<ad::Tensor> raws;
  std::vector<const PolicyNetworkSpec*> specs;
  std::vector<LocalChannelDataset> locals;
  if (policy.distributed) {
    for (std::size_t b = 0; b < policy.models.size(); ++b)
      locals.push_back(slice_local(test_ds, b));
  }
  for (std::size_t mdl = 0; mdl < policy.models.size(); ++mdl) {
    const auto& spec = policy.models[mdl].spec();
    specs.push_back(&spec);
    ad::Tensor x({s_count, spec.input_dim});
    for (std::size_t s = 0; s < s_count; ++s) {
      const auto flat = policy.distributed
                            ? flatten_channel(locals[mdl].samples[s])
                            : flatten_channel(test_ds.samples[s].coefficients);
      std::copy(flat.begin(), flat.end(), x.data.begin() + s * spec.input_dim);
    }
    ad::Tape tape;
    const auto v = policy.models[mdl].forward(tape, std::move(x), false);
    raws.push_back(tape.value(v));
    em.flops_per_decision = policy.models[mdl].flops_per_sample();
  }

  double viol = 0.0;
  for (std::size_t s = 0; s < s_count; ++s) {
    auto y = AllocationDecision::zeros(d);
    if (policy.distributed) {
      for (std::size_t b = 0; b < policy.models.size(); ++b) {
        const auto& spec = *specs[b];
        const double* row = raws[b].data.data() + s * spec.output_dim();
        auto po = map_outputs(spec, row);
        const auto vh = decision_layer(po.v_relaxed, mode, d.i);
        std::copy(po.w.begin(), po.w.end(), y.w.begin() + b * w_per_sbs);
        std::copy(vh.begin(), vh.end(), y.v.begin() + b * v_per_sbs);
        std::copy(po.v_relaxed.begin(), po.v_relaxed.end(),
                  y.v_relaxed.begin() + b * v_per_sbs);
      }
    } else {
      const auto& spec = *specs[0];
      const double* row = raws[0].data.data() + s * spec.output_dim();
      auto po = map_outputs(spec, row);
      y.w = std::move(po.w);
      y.v = decision_layer(po.v_relaxed, mode, d.i);
      y.v_relaxed = std::move(po.v_relaxed);
    }
    double weighted = 0.0;
    for (std::size_t i = 0; i < sys.i; ++i) {
      const double r = user_rate(test_ds.samples[s], y, i, sys.sigma2);
      em.per_user_rate_mean[i] += r / static_cast<double>(s_count);
      weighted += sys.alpha_of(i) * r;
      if (r < sys.r_min) viol += 1.0;
    }
    em.mean_weighted_sum_rate += weighted / static_cast<double>(s_count);
    double labs = 0.0;
    for (std::size_t b = 0; b < sys.b; ++b) {
      const double p = transmit_power(y, b);
      em.per_sbs_power_mean[b] += p / static_cast<double>(s_count);
      labs += std::abs(p - sys.p_max);
    }
    em.l_abs_mean +=
        labs / static_cast<double>(sys.b) / static_cast<double>(s_count);
  }
  em.rate_violation_fraction =
      viol / static_cast<double>(s_count * sys.i);
  return em;
}

}  // namespace cfnet
