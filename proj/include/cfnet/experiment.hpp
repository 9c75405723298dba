#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "cfnet/baselines.hpp"
#include "cfnet/channel.hpp"
#include "cfnet/checkpoint.hpp"
#include "cfnet/policy.hpp"
#include "cfnet/robustness.hpp"
#include "cfnet/training.hpp"

namespace cfnet {

// Schema violations are collected and reported field-by-field.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::vector<std::string>& fields)
      : std::runtime_error(join(fields)), violations(fields) {}
  std::vector<std::string> violations;

 private:
  static std::string join(const std::vector<std::string>& fields) {
    std::string s = "config schema violations:";
    for (const auto& f : fields) s += "\n  - " + f;
    return s;
  }
};

struct MissingInputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  SystemConfig sys;
  ChannelGenConfig channel;
  TrainConfig train;
  double area_side = 250.0;
  std::size_t train_samples = 2000;
  std::size_t test_samples = 200;
  DecisionMode decision_mode = DecisionMode::kThreshold;
  struct Sweep {
    bool enabled = false;
    std::string axis = "B";  // one of B, I, N
    std::vector<std::size_t> values;
  } sweep;
  std::string output_dir = "out";
  std::uint64_t seed = 1;
};

// Worker-parallelism cap from CFNET_THREADS (>=1; default 1). Core math is
// single-threaded per sample; parallelism is only over independent samples,
// so results are identical for any cap.
inline unsigned worker_thread_cap() {
  const char* env = std::getenv("CFNET_THREADS");
  if (!env) return 1;
  const long v = std::strtol(env, nullptr, 10);
  if (v < 1) return 1;
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  return static_cast<unsigned>(std::min<long>(v, hw));
}

// Deterministic parallel map over [0, count): each worker fills a disjoint
// stripe of a preallocated output.
template <typename Fn>
inline void parallel_for(std::size_t count, Fn&& fn) {
  const unsigned threads =
      std::min<std::size_t>(worker_thread_cap(), std::max<std::size_t>(count, 1));
  if (threads <= 1) {
    for (std::size_t k = 0; k < count; ++k) fn(k);
    return;
  }
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      for (std::size_t k = t; k < count; k += threads) fn(k);
    });
  for (auto& th : pool) th.join();
}

// --- JSON config ------------------------------------------------------------

namespace detail {

inline std::string scheme_name(LossScheme s) {
  switch (s) {
    case LossScheme::kS1: return "S1";
    case LossScheme::kS2: return "S2";
    case LossScheme::kB1: return "B1";
    case LossScheme::kB2: return "B2";
    case LossScheme::kB3: return "B3";
  }
  return "S1";
}

inline std::optional<LossScheme> parse_scheme(const std::string& s) {
  if (s == "S1") return LossScheme::kS1;
  if (s == "S2") return LossScheme::kS2;
  if (s == "B1") return LossScheme::kB1;
  if (s == "B2") return LossScheme::kB2;
  if (s == "B3") return LossScheme::kB3;
  return std::nullopt;
}

}  // namespace detail

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["sys"] = {{"b", c.sys.b},
              {"n", c.sys.n},
              {"i", c.sys.i},
              {"mt", c.sys.mt},
              {"mr", c.sys.mr},
              {"sigma2_dbm", watts_to_dbm(c.sys.sigma2)},
              {"p_max_dbm", watts_to_dbm(c.sys.p_max)},
              {"r_min", c.sys.r_min},
              {"alpha", c.sys.alpha}};
  j["channel"] = {{"carrier_freq_hz", c.channel.carrier_freq_hz},
                  {"pathloss_exponent", c.channel.pathloss_exponent},
                  {"pathloss_intercept_db", c.channel.pathloss_intercept_db},
                  {"shadowing_sigma_db", c.channel.shadowing_sigma_db}};
  j["train"] = {{"epochs", c.train.epochs},
                {"batch", c.train.batch},
                {"lr", c.train.lr},
                {"scheme", detail::scheme_name(c.train.scheme)},
                {"nfl_variant",
                 c.train.hyper.nfl_variant == NflVariant::kContinuous
                     ? "continuous"
                     : "as_printed"},
                {"x1", c.train.hyper.x1},
                {"x2", c.train.hyper.x2},
                {"x3", c.train.hyper.x3},
                {"eval_every", c.train.eval_every}};
  j["data"] = {{"train_samples", c.train_samples},
               {"test_samples", c.test_samples},
               {"area_side", c.area_side}};
  j["decision_mode"] = c.decision_mode == DecisionMode::kThreshold
                           ? "threshold"
                           : "argmax";
  if (c.sweep.enabled)
    j["sweep"] = {{"axis", c.sweep.axis}, {"values", c.sweep.values}};
  j["output_dir"] = c.output_dir;
  j["seed"] = c.seed;
  return j;
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  std::vector<std::string> errs;
  auto num = [&](const nlohmann::json& o, const char* group, const char* key,
                 double lo, double hi, double def) -> double {
    if (!o.contains(key)) return def;
    if (!o[key].is_number()) {
      errs.push_back(std::string(group) + "." + key + ": must be a number");
      return def;
    }
    const double v = o[key].get<double>();
    if (v < lo || v > hi) {
      errs.push_back(std::string(group) + "." + key + ": out of range [" +
                     std::to_string(lo) + ", " + std::to_string(hi) + "]");
      return def;
    }
    return v;
  };

  if (j.contains("sys")) {
    const auto& s = j["sys"];
    c.sys.b = static_cast<std::uint32_t>(num(s, "sys", "b", 1, 64, 3));
    c.sys.n = static_cast<std::uint32_t>(num(s, "sys", "n", 1, 256, 4));
    c.sys.i = static_cast<std::uint32_t>(num(s, "sys", "i", 1, 256, 10));
    c.sys.mt = static_cast<std::uint32_t>(num(s, "sys", "mt", 1, 64, 4));
    c.sys.mr = static_cast<std::uint32_t>(num(s, "sys", "mr", 1, 64, 2));
    c.sys.sigma2 = dbm_to_watts(num(s, "sys", "sigma2_dbm", -200, 100, -26));
    c.sys.p_max = dbm_to_watts(num(s, "sys", "p_max_dbm", -200, 100, 40));
    c.sys.r_min = num(s, "sys", "r_min", 0, 1e9, 0.02);
    if (s.contains("alpha")) {
      if (!s["alpha"].is_array())
        errs.push_back("sys.alpha: must be an array of numbers");
      else
        for (const auto& a : s["alpha"]) {
          if (!a.is_number()) {
            errs.push_back("sys.alpha: must be an array of numbers");
            break;
          }
          c.sys.alpha.push_back(a.get<double>());
        }
      if (!c.sys.alpha.empty() && c.sys.alpha.size() != c.sys.i)
        errs.push_back("sys.alpha: length must equal sys.i");
    }
  }
  if (j.contains("channel")) {
    const auto& ch = j["channel"];
    c.channel.carrier_freq_hz =
        num(ch, "channel", "carrier_freq_hz", 1e6, 1e12, 2.1e9);
    c.channel.pathloss_exponent =
        num(ch, "channel", "pathloss_exponent", 1, 8, 3.0);
    c.channel.pathloss_intercept_db =
        num(ch, "channel", "pathloss_intercept_db", 0, 200,
            c.channel.pathloss_intercept_db);
    c.channel.shadowing_sigma_db =
        num(ch, "channel", "shadowing_sigma_db", 0, 30, 8.0);
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    c.train.epochs = static_cast<std::size_t>(num(t, "train", "epochs", 0, 1e6, 10));
    c.train.batch = static_cast<std::size_t>(num(t, "train", "batch", 1, 1e6, 100));
    c.train.lr = num(t, "train", "lr", 0, 10, 1e-2);
    c.train.eval_every =
        static_cast<std::size_t>(num(t, "train", "eval_every", 0, 1e9, 0));
    if (t.contains("scheme")) {
      if (!t["scheme"].is_string())
        errs.push_back("train.scheme: must be a string");
      else if (auto s = detail::parse_scheme(t["scheme"].get<std::string>()))
        c.train.scheme = *s;
      else
        errs.push_back("train.scheme: must be one of S1, S2, B1, B2, B3");
    }
    if (t.contains("nfl_variant")) {
      const std::string v =
          t["nfl_variant"].is_string() ? t["nfl_variant"].get<std::string>() : "";
      if (v == "continuous")
        c.train.hyper.nfl_variant = NflVariant::kContinuous;
      else if (v == "as_printed")
        c.train.hyper.nfl_variant = NflVariant::kAsPrinted;
      else
        errs.push_back("train.nfl_variant: must be continuous or as_printed");
    }
    c.train.hyper.x1 = num(t, "train", "x1", -1e6, -1e-9, -1.0);
    c.train.hyper.x2 = num(t, "train", "x2", -1e6, 0, 0.0);
    c.train.hyper.x3 = num(t, "train", "x3", 1e-9, 1e6, 0.11);
  }
  if (j.contains("data")) {
    const auto& d = j["data"];
    c.train_samples =
        static_cast<std::size_t>(num(d, "data", "train_samples", 1, 1e9, 2000));
    c.test_samples =
        static_cast<std::size_t>(num(d, "data", "test_samples", 1, 1e9, 200));
    c.area_side = num(d, "data", "area_side", 1, 1e6, 250.0);
  }
  if (j.contains("decision_mode")) {
    const std::string v = j["decision_mode"].is_string()
                              ? j["decision_mode"].get<std::string>()
                              : "";
    if (v == "threshold")
      c.decision_mode = DecisionMode::kThreshold;
    else if (v == "argmax")
      c.decision_mode = DecisionMode::kPerSubcarrierArgmax;
    else
      errs.push_back("decision_mode: must be threshold or argmax");
  }
  if (j.contains("sweep")) {
    const auto& s = j["sweep"];
    c.sweep.enabled = true;
    if (!s.contains("axis") || !s["axis"].is_string() ||
        (s["axis"] != "B" && s["axis"] != "I" && s["axis"] != "N"))
      errs.push_back("sweep.axis: must be one of B, I, N");
    else
      c.sweep.axis = s["axis"].get<std::string>();
    if (!s.contains("values") || !s["values"].is_array() ||
        s["values"].empty())
      errs.push_back("sweep.values: must be a non-empty array");
    else {
      for (const auto& v : s["values"]) {
        if (!v.is_number_integer() || v.get<long>() < 1) {
          errs.push_back("sweep.values: entries must be positive integers");
          break;
        }
        c.sweep.values.push_back(v.get<std::size_t>());
      }
      if (!std::is_sorted(c.sweep.values.begin(), c.sweep.values.end()))
        errs.push_back("sweep.values: must be sorted ascending");
    }
  }
  if (j.contains("output_dir")) {
    if (!j["output_dir"].is_string())
      errs.push_back("output_dir: must be a string");
    else
      c.output_dir = j["output_dir"].get<std::string>();
  }
  if (j.contains("seed")) {
    if (!j["seed"].is_number_integer())
      errs.push_back("seed: must be an integer");
    else
      c.seed = j["seed"].get<std::uint64_t>();
  }
  c.channel.seed = c.seed;
  c.train.seed = c.seed;
  if (!errs.empty()) throw ConfigError(errs);
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw MissingInputError("config file not found: " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError({std::string("json parse error: ") + e.what()});
  }
  return config_from_json(j);
}

inline std::uint64_t config_hash(const ExperimentConfig& c) {
  const std::string dump = config_to_json(c).dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : dump) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

// --- Output helpers ---------------------------------------------------------

namespace detail {

inline std::string fmt_g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

inline void write_manifest(const ExperimentConfig& cfg,
                           const std::string& subcommand) {
  std::filesystem::create_directories(cfg.output_dir);
  nlohmann::json m;
  m["subcommand"] = subcommand;
  m["config_hash"] = config_hash(cfg);
  m["seed"] = cfg.seed;
  m["effective_config"] = config_to_json(cfg);
  m["format_versions"] = {{"dataset", 1}, {"checkpoint", 1}};
  std::ofstream os(std::filesystem::path(cfg.output_dir) /
                   ("manifest-" + subcommand + ".json"));
  os << m.dump(2) << "\n";
}

inline void write_metrics_jsonl(const std::vector<StepMetrics>& metrics,
                                const std::string& path) {
  std::ofstream os(path);
  for (const auto& m : metrics) {
    nlohmann::json j = {{"step", m.step},
                        {"epoch", m.epoch},
                        {"joint_loss", m.joint_loss},
                        {"f_mean", m.f_mean},
                        {"g_violation_frac", m.g_violation_frac},
                        {"l_abs_mean", m.l_abs_mean},
                        {"wall_ms", m.wall_ms}};
    os << j.dump() << "\n";
  }
}

// Eval summary CSV. Deliberately excludes wall-clock fields so reruns are
// comparable to 1e-12.
inline void write_eval_csv(const EvalMetrics& em, const std::string& algorithm,
                           std::uint64_t seed, const std::string& path) {
  std::ofstream os(path);
  os << "algorithm,seed,mean_weighted_sum_rate,rate_violation_fraction,"
        "l_abs_mean,flops_per_decision\n";
  os << algorithm << "," << seed << ","
     << detail::fmt_g17(em.mean_weighted_sum_rate) << ","
     << detail::fmt_g17(em.rate_violation_fraction) << ","
     << detail::fmt_g17(em.l_abs_mean) << "," << em.flops_per_decision
     << "\n";
}

// Checkpoint + JSON sidecar holding the network dimensions, validated at
// load time.
inline void save_policy(const PolicyModel& model, const std::string& base) {
  save_checkpoint(model.named_tensors(), base + ".cfth");
  const auto& s = model.spec();
  nlohmann::json j = {
      {"input_dim", s.input_dim},
      {"hidden", s.hidden},
      {"w_real_count", s.w_real_count},
      {"v_count", s.v_count},
      {"beta_count", s.beta_count},
      {"w_scale", s.mapping.w_scale},
      {"beta_floor", s.mapping.beta_floor},
      {"decision_mode",
       s.decision_mode == DecisionMode::kThreshold ? "threshold" : "argmax"},
      {"sbs_count", s.sbs_count}};
  std::ofstream os(base + ".spec.json");
  os << j.dump(2) << "\n";
}

inline PolicyModel load_policy(const PolicyNetworkSpec& expected,
                               const std::string& base) {
  std::ifstream is(base + ".spec.json");
  if (!is) throw MissingInputError("checkpoint sidecar not found: " + base +
                                   ".spec.json");
  nlohmann::json j;
  is >> j;
  std::vector<std::string> errs;
  auto check = [&](const char* key, std::size_t want) {
    if (!j.contains(key) || j[key].get<std::size_t>() != want)
      errs.push_back(std::string("checkpoint.") + key +
                     ": does not match expected network dimensions");
  };
  check("input_dim", expected.input_dim);
  check("w_real_count", expected.w_real_count);
  check("v_count", expected.v_count);
  check("beta_count", expected.beta_count);
  if (!errs.empty()) throw ConfigError(errs);
  PolicyModel model(expected, 0);
  model.load_tensors(load_checkpoint(base + ".cfth"));
  return model;
}

// --- Subcommand pipelines ---------------------------------------------------

inline std::string dataset_path(const ExperimentConfig& cfg,
                                const std::string& split) {
  return (std::filesystem::path(cfg.output_dir) / (split + ".cfds")).string();
}

inline ChannelDataset generate_dataset_parallel(const Topology& topo,
                                                const ChannelGenConfig& cfg,
                                                const ChannelDims& dims,
                                                std::size_t count) {
  ChannelDataset ds;
  ds.dims = dims;
  ds.config_fingerprint = config_fingerprint(cfg, dims);
  ds.samples.resize(count);
  // Per-sample derived RNG streams make parallel generation identical to
  // sequential for any thread count.
  parallel_for(count, [&](std::size_t k) {
    ds.samples[k] = generate_sample(topo, cfg, dims, k);
  });
  return ds;
}

inline Topology topology_for(const ExperimentConfig& cfg) {
  return place_nodes(cfg.sys.b, cfg.sys.i, cfg.area_side, cfg.seed);
}

inline void run_gen_data(const ExperimentConfig& cfg) {
  const auto topo = topology_for(cfg);
  const auto dims = cfg.sys.dims();
  ChannelGenConfig train_ch = cfg.channel;
  train_ch.seed = Rng::derive(cfg.seed, 0x7121A);
  ChannelGenConfig test_ch = cfg.channel;
  test_ch.seed = Rng::derive(cfg.seed, 0x7E57);
  const auto train_ds =
      generate_dataset_parallel(topo, train_ch, dims, cfg.train_samples);
  const auto test_ds =
      generate_dataset_parallel(topo, test_ch, dims, cfg.test_samples);
  std::filesystem::create_directories(cfg.output_dir);
  save_dataset(train_ds, dataset_path(cfg, "train"));
  save_dataset(test_ds, dataset_path(cfg, "test"));
  write_manifest(cfg, "gen-data");
}

inline ChannelDataset load_split(const ExperimentConfig& cfg,
                                 const std::string& split) {
  const auto path = dataset_path(cfg, split);
  if (!std::filesystem::exists(path))
    throw MissingInputError("dataset not found: " + path +
                            " (run the gen-data subcommand first)");
  auto ds = load_dataset(path);
  if (!(ds.dims == cfg.sys.dims()))
    throw ConfigError({"sys: dims do not match dataset " + path});
  return ds;
}

struct TrainRunSummary {
  EvalMetrics eval;
  double final_joint_loss = 0.0;
  std::size_t steps = 0;
  std::size_t skipped_steps = 0;
};

inline TrainRunSummary run_train_cmtssl(const ExperimentConfig& cfg) {
  const auto train_ds = load_split(cfg, "train");
  const auto test_ds = load_split(cfg, "test");
  auto tcfg = cfg.train;
  tcfg.decision_mode = cfg.decision_mode;
  auto res = train_cmtssl(train_ds, tcfg, cfg.sys);
  const auto dir = std::filesystem::path(cfg.output_dir);
  write_metrics_jsonl(res.metrics, (dir / "cmtssl_train_log.jsonl").string());
  save_policy(res.model, (dir / "cmtssl").string());
  PolicySet ps;
  ps.models.push_back(res.model);
  ps.distributed = false;
  TrainRunSummary s;
  s.eval = evaluate_policy(ps, test_ds, cfg.sys, cfg.decision_mode);
  s.final_joint_loss =
      res.metrics.empty() ? 0.0 : res.metrics.back().joint_loss;
  s.steps = res.metrics.size();
  s.skipped_steps = res.skipped_steps;
  write_eval_csv(s.eval, "cmtssl_" + detail::scheme_name(cfg.train.scheme),
                 cfg.seed, (dir / "cmtssl_eval.csv").string());
  write_manifest(cfg, "train-cmtssl");
  return s;
}

inline TrainRunSummary run_train_dmtssl(const ExperimentConfig& cfg) {
  const auto train_ds = load_split(cfg, "train");
  const auto test_ds = load_split(cfg, "test");
  auto tcfg = cfg.train;
  tcfg.decision_mode = cfg.decision_mode;
  auto res = train_dmtssl(train_ds, tcfg, cfg.sys);
  const auto dir = std::filesystem::path(cfg.output_dir);
  write_metrics_jsonl(res.metrics, (dir / "dmtssl_train_log.jsonl").string());
  for (std::size_t b = 0; b < res.models.size(); ++b)
    save_policy(res.models[b],
                (dir / ("dmtssl_sbs" + std::to_string(b))).string());
  {
    std::ofstream os(dir / "dmtssl_bus_trace.jsonl");
    for (const auto& r : res.bus_trace) {
      const char* kind = r.kind == BusMessage::Kind::kIndexBroadcast
                             ? "index_broadcast"
                             : r.kind == BusMessage::Kind::kUpload
                                   ? "upload"
                                   : "loss_feedback";
      nlohmann::json j = {{"kind", kind}, {"step", r.step}, {"sbs", r.sbs}};
      os << j.dump() << "\n";
    }
  }
  PolicySet ps;
  ps.models = res.models;
  ps.distributed = true;
  TrainRunSummary s;
  s.eval = evaluate_policy(ps, test_ds, cfg.sys, cfg.decision_mode);
  s.final_joint_loss =
      res.metrics.empty() ? 0.0 : res.metrics.back().joint_loss;
  s.steps = res.metrics.size();
  s.skipped_steps = res.skipped_steps;
  write_eval_csv(s.eval, "dmtssl_" + detail::scheme_name(cfg.train.scheme),
                 cfg.seed, (dir / "dmtssl_eval.csv").string());
  write_manifest(cfg, "train-dmtssl");
  return s;
}

struct BaselineSummary {
  EvalMetrics rsa;
  EvalMetrics gsa;
  std::size_t rsa_fallbacks = 0;
  std::size_t gsa_fallbacks = 0;
};

inline EvalMetrics evaluate_allocation_fn(
    const ChannelDataset& test_ds, const SystemConfig& sys,
    const std::function<AllocationDecision(const ChannelSample&, std::size_t)>&
        fn) {
  EvalMetrics em;
  em.per_user_rate_mean.assign(sys.i, 0.0);
  em.per_sbs_power_mean.assign(sys.b, 0.0);
  const std::size_t count = test_ds.samples.size();
  if (count == 0) return em;
  double viol = 0.0;
  for (std::size_t s = 0; s < count; ++s) {
    const auto y = fn(test_ds.samples[s], s);
    double weighted = 0.0;
    for (std::size_t i = 0; i < sys.i; ++i) {
      const double r = user_rate(test_ds.samples[s], y, i, sys.sigma2);
      em.per_user_rate_mean[i] += r / static_cast<double>(count);
      weighted += sys.alpha_of(i) * r;
      if (r < sys.r_min) viol += 1.0;
    }
    em.mean_weighted_sum_rate += weighted / static_cast<double>(count);
    double labs = 0.0;
    for (std::size_t b = 0; b < sys.b; ++b) {
      const double p = transmit_power(y, b);
      em.per_sbs_power_mean[b] += p / static_cast<double>(count);
      labs += std::abs(p - sys.p_max);
    }
    em.l_abs_mean +=
        labs / static_cast<double>(sys.b) / static_cast<double>(count);
  }
  em.rate_violation_fraction = viol / static_cast<double>(count * sys.i);
  return em;
}

inline BaselineSummary run_baseline_eval(const ChannelDataset& test_ds,
                                         const SystemConfig& sys,
                                         std::uint64_t seed) {
  BaselineSummary bs;
  bs.rsa = evaluate_allocation_fn(
      test_ds, sys, [&](const ChannelSample& h, std::size_t s) {
        Rng rng(Rng::derive(seed, 0x25A0000 + s));
        return rsa_zfbf(h, sys, rng, &bs.rsa_fallbacks);
      });
  bs.rsa.flops_per_decision = flops_rsa_zfbf(sys).total;
  bs.gsa = evaluate_allocation_fn(
      test_ds, sys, [&](const ChannelSample& h, std::size_t) {
        return gsa_zfbf(h, sys, &bs.gsa_fallbacks);
      });
  bs.gsa.flops_per_decision = flops_gsa_zfbf(sys).total;
  return bs;
}

inline BaselineSummary run_baseline(const ExperimentConfig& cfg) {
  const auto test_ds = load_split(cfg, "test");
  const auto bs = run_baseline_eval(test_ds, cfg.sys, cfg.seed);
  const auto dir = std::filesystem::path(cfg.output_dir);
  std::ofstream os(dir / "baseline_eval.csv");
  os << "algorithm,seed,mean_weighted_sum_rate,rate_violation_fraction,"
        "l_abs_mean,flops_per_decision\n";
  os << "rsa_zfbf," << cfg.seed << ","
     << detail::fmt_g17(bs.rsa.mean_weighted_sum_rate) << ","
     << detail::fmt_g17(bs.rsa.rate_violation_fraction) << ","
     << detail::fmt_g17(bs.rsa.l_abs_mean) << ","
     << bs.rsa.flops_per_decision << "\n";
  os << "gsa_zfbf," << cfg.seed << ","
     << detail::fmt_g17(bs.gsa.mean_weighted_sum_rate) << ","
     << detail::fmt_g17(bs.gsa.rate_violation_fraction) << ","
     << detail::fmt_g17(bs.gsa.l_abs_mean) << ","
     << bs.gsa.flops_per_decision << "\n";
  write_manifest(cfg, "baseline");
  return bs;
}

// Sweep over one axis: baseline sum rates + FLOP counts per algorithm.
// Columns (axis, value, algorithm, mean_sum_rate, flops); the policy rows
// carry network inference FLOPs (complexity trend without retraining).
inline void run_sweep(const ExperimentConfig& cfg) {
  if (!cfg.sweep.enabled || cfg.sweep.values.empty())
    throw ConfigError({"sweep: axis and non-empty sorted values required"});
  std::filesystem::create_directories(cfg.output_dir);
  std::ofstream os(std::filesystem::path(cfg.output_dir) / "sweep.csv");
  os << "axis,value,algorithm,mean_sum_rate,flops\n";
  for (const std::size_t v : cfg.sweep.values) {
    ExperimentConfig cell = cfg;
    if (cfg.sweep.axis == "B")
      cell.sys.b = static_cast<std::uint32_t>(v);
    else if (cfg.sweep.axis == "I")
      cell.sys.i = static_cast<std::uint32_t>(v);
    else
      cell.sys.n = static_cast<std::uint32_t>(v);
    if (!cell.sys.alpha.empty()) cell.sys.alpha.clear();
    const auto topo =
        place_nodes(cell.sys.b, cell.sys.i, cell.area_side, cell.seed);
    ChannelGenConfig ch = cell.channel;
    ch.seed = Rng::derive(cell.seed, 0x7E57);
    const auto ds = generate_dataset_parallel(topo, ch, cell.sys.dims(),
                                              cfg.test_samples);
    const auto bs = run_baseline_eval(ds, cell.sys, cell.seed);
    os << cfg.sweep.axis << "," << v << ",rsa_zfbf,"
       << detail::fmt_g17(bs.rsa.mean_weighted_sum_rate) << ","
       << bs.rsa.flops_per_decision << "\n";
    os << cfg.sweep.axis << "," << v << ",gsa_zfbf,"
       << detail::fmt_g17(bs.gsa.mean_weighted_sum_rate) << ","
       << bs.gsa.flops_per_decision << "\n";
    const PolicyModel cm(cmtssl_spec(cell.sys), 0);
    const PolicyModel dm(dmtssl_spec(cell.sys), 0);
    os << cfg.sweep.axis << "," << v << ",cmtssl,,"
       << cm.flops_per_sample() << "\n";
    os << cfg.sweep.axis << "," << v << ",dmtssl,,"
       << dm.flops_per_sample() * cell.sys.b << "\n";
  }
  write_manifest(cfg, "sweep");
}

// --- DATL study -------------------------------------------------------------

struct DatlStudyReport {
  double datl_sum_rate = 0.0;
  double retrained_sum_rate = 0.0;
  double ratio = 0.0;
  std::size_t datl_gradient_steps = 0;
  std::size_t retrain_gradient_steps = 0;
  std::size_t source_index = 0;
};

inline DatlStudyReport datl_study(const ExperimentConfig& cfg) {
  const std::uint32_t b0 = cfg.sys.b;
  auto topo = topology_for(cfg);
  // New SBS at a seeded random position inside the same area.
  Rng add_rng(Rng::derive(cfg.seed, 0xADD5B5));
  const double nx = add_rng.uniform(0.0, cfg.area_side);
  const double ny = add_rng.uniform(0.0, cfg.area_side);
  Topology topo_ext = topo;
  topo_ext.sbs_positions.push_back({nx, ny, kDefaultSbsHeightM});

  SystemConfig sys_ext = cfg.sys;
  sys_ext.b = b0 + 1;

  ChannelGenConfig train_ch = cfg.channel;
  train_ch.seed = Rng::derive(cfg.seed, 0x7121A);
  ChannelGenConfig test_ch = cfg.channel;
  test_ch.seed = Rng::derive(cfg.seed, 0x7E57);

  const auto train_b0 = generate_dataset_parallel(topo, train_ch,
                                                  cfg.sys.dims(),
                                                  cfg.train_samples);
  const auto train_ext = generate_dataset_parallel(
      topo_ext, train_ch, sys_ext.dims(), cfg.train_samples);
  const auto test_ext = generate_dataset_parallel(
      topo_ext, test_ch, sys_ext.dims(), cfg.test_samples);

  // Source models: DMTSSL trained on the original B SBSs.
  auto tcfg = cfg.train;
  tcfg.decision_mode = cfg.decision_mode;
  auto base = train_dmtssl(train_b0, tcfg, cfg.sys);

  // DATL arm: existing models kept, nearest-SBS model copied to the new SBS.
  auto transferred = datl_transfer(base.models, topo, nx, ny);
  PolicySet datl_ps;
  datl_ps.models = base.models;
  datl_ps.models.push_back(transferred.model);
  datl_ps.distributed = true;
  const auto datl_eval =
      evaluate_policy(datl_ps, test_ext, sys_ext, cfg.decision_mode);

  // Retrain arm: fresh DMTSSL at B+1.
  TrainConfig retrain = tcfg;
  auto retrained = train_dmtssl(train_ext, retrain, sys_ext);
  PolicySet re_ps;
  re_ps.models = retrained.models;
  re_ps.distributed = true;
  const auto re_eval =
      evaluate_policy(re_ps, test_ext, sys_ext, cfg.decision_mode);

  DatlStudyReport r;
  r.datl_sum_rate = datl_eval.mean_weighted_sum_rate;
  r.retrained_sum_rate = re_eval.mean_weighted_sum_rate;
  r.ratio = re_eval.mean_weighted_sum_rate > 0.0
                ? datl_eval.mean_weighted_sum_rate /
                      re_eval.mean_weighted_sum_rate
                : 0.0;
  r.datl_gradient_steps = transferred.gradient_steps;
  r.retrain_gradient_steps = retrained.metrics.size();
  r.source_index = transferred.source_index;
  return r;
}

inline DatlStudyReport run_transfer_datl(const ExperimentConfig& cfg) {
  const auto r = datl_study(cfg);
  std::filesystem::create_directories(cfg.output_dir);
  nlohmann::json j = {{"datl_sum_rate", r.datl_sum_rate},
                      {"retrained_sum_rate", r.retrained_sum_rate},
                      {"ratio", r.ratio},
                      {"datl_gradient_steps", r.datl_gradient_steps},
                      {"retrain_gradient_steps", r.retrain_gradient_steps},
                      {"source_sbs", r.source_index}};
  std::ofstream os(std::filesystem::path(cfg.output_dir) /
                   "datl_report.json");
  os << j.dump(2) << "\n";
  write_manifest(cfg, "transfer-datl");
  return r;
}

// --- Robustness lab ---------------------------------------------------------

inline std::vector<NoiseToleranceRow> run_robustness_lab(
    const ExperimentConfig& cfg, const NoiseToleranceConfig& lab) {
  const auto rows = run_noise_tolerance_experiment(lab);
  std::filesystem::create_directories(cfg.output_dir);
  std::ofstream os(std::filesystem::path(cfg.output_dir) /
                   "robustness.csv");
  os << "loss,eta,clean_test_acc,noisy_train_risk,predicted_noisy_risk,"
        "identity_residual\n";
  for (const auto& r : rows)
    os << r.loss_name << "," << detail::fmt_g17(r.eta) << ","
       << detail::fmt_g17(r.clean_test_acc) << ","
       << detail::fmt_g17(r.noisy_train_risk) << ","
       << detail::fmt_g17(r.predicted_noisy_risk) << ","
       << detail::fmt_g17(r.identity_residual) << "\n";
  write_manifest(cfg, "robustness-lab");
  return rows;
}

// --- Gradient check ---------------------------------------------------------

// Unit-scale synthetic channel entries keep task values O(1) so relative
// finite-difference comparisons are well conditioned.
inline ChannelSample synthetic_unit_sample(const ChannelDims& dims,
                                           std::uint64_t seed) {
  ChannelSample s;
  s.dims = dims;
  s.coefficients.resize(dims.entries());
  Rng rng(Rng::derive(seed, 0x5CA1E));
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  for (auto& c : s.coefficients)
    c = {rng.normal() * inv_sqrt2, rng.normal() * inv_sqrt2};
  return s;
}

struct GradcheckReport {
  double max_rel_error = 0.0;
  std::size_t instances = 0;
  std::size_t entries_checked = 0;
};

// Checks d(task)/d(raw outputs) for every task value against central finite
// differences on the relaxed pipeline (the gate is the relaxed v so the map
// is differentiable end to end).
inline GradcheckReport gradcheck_tasks(const SystemConfig& sys,
                                       std::uint64_t seed,
                                       std::size_t instances,
                                       double h = 1e-5) {
  const auto dims = sys.dims();
  const auto spec = cmtssl_spec(sys);
  const std::size_t out_dim = spec.output_dim();
  const std::size_t n_tasks = sys.task_count();
  GradcheckReport rep;
  rep.instances = instances;

  auto tasks_at = [&](const ChannelSample& hch,
                      const std::vector<double>& raw) {
    auto po = map_outputs(spec, raw.data());
    RateGraph g(hch, po.w, po.v_relaxed, sys);
    const auto& tv = g.values();
    std::vector<double> t;
    t.reserve(n_tasks);
    t.push_back(tv.f);
    t.insert(t.end(), tv.g.begin(), tv.g.end());
    t.insert(t.end(), tv.l.begin(), tv.l.end());
    return t;
  };

  for (std::size_t inst = 0; inst < instances; ++inst) {
    const auto hch = synthetic_unit_sample(dims, seed + inst);
    Rng rng(Rng::derive(seed, 0xFD00 + inst));
    std::vector<double> raw(out_dim);
    for (auto& v : raw) v = rng.uniform(0.05, 0.95);

    // Analytic: one backward per task with a one-hot seed.
    auto po = map_outputs(spec, raw.data());
    RateGraph graph(hch, po.w, po.v_relaxed, sys);
    std::vector<std::vector<double>> analytic(
        n_tasks, std::vector<double>(out_dim, 0.0));
    for (std::size_t t = 0; t < n_tasks; ++t) {
      double d_f = 0.0;
      std::vector<double> d_g(sys.i, 0.0), d_l(sys.b, 0.0);
      if (t == 0)
        d_f = 1.0;
      else if (t < 1 + sys.i)
        d_g[t - 1] = 1.0;
      else
        d_l[t - 1 - sys.i] = 1.0;
      const auto gr = graph.backward(d_f, d_g, d_l);
      std::vector<double> d_beta(spec.beta_count, 0.0);
      seed_raw_grads(spec, raw.data(), gr.d_w, gr.d_v, d_beta,
                     analytic[t].data());
    }

    const std::size_t graph_dim = spec.w_real_count + spec.v_count;
    for (std::size_t k = 0; k < graph_dim; ++k) {
      std::vector<double> rp = raw, rm = raw;
      rp[k] += h;
      rm[k] -= h;
      const auto tp = tasks_at(hch, rp);
      const auto tm = tasks_at(hch, rm);
      for (std::size_t t = 0; t < n_tasks; ++t) {
        const double fd = (tp[t] - tm[t]) / (2.0 * h);
        const double an = analytic[t][k];
        const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
        rep.max_rel_error =
            std::max(rep.max_rel_error, std::abs(fd - an) / denom);
        rep.entries_checked++;
      }
    }
  }
  return rep;
}

inline GradcheckReport run_gradcheck(const ExperimentConfig& cfg) {
  SystemConfig small;
  small.b = 2;
  small.n = 2;
  small.i = 2;
  small.mt = 2;
  small.mr = 2;
  small.sigma2 = 1.0;
  small.p_max = 1.0;
  const auto rep = gradcheck_tasks(small, cfg.seed, 50);
  std::filesystem::create_directories(cfg.output_dir);
  nlohmann::json j = {{"max_rel_error", rep.max_rel_error},
                      {"instances", rep.instances},
                      {"entries_checked", rep.entries_checked},
                      {"tolerance", 1e-4},
                      {"pass", rep.max_rel_error < 1e-4}};
  std::ofstream os(std::filesystem::path(cfg.output_dir) /
                   "gradcheck.json");
  os << j.dump(2) << "\n";
  write_manifest(cfg, "gradcheck");
  return rep;
}

// --- Report -----------------------------------------------------------------

struct ReportResult {
  std::size_t rows = 0;
  std::vector<std::string> warnings;
};

// Merges every *_eval.csv under `dir` into report.csv. Idempotent: the
// report file itself is never an input.
inline ReportResult run_report(const std::string& dir) {
  ReportResult res;
  std::filesystem::create_directories(dir);
  std::vector<std::string> lines;
  bool found_manifest = false;
  std::vector<std::filesystem::path> inputs;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.rfind("manifest-", 0) == 0) found_manifest = true;
    if (name.size() > 9 && name.substr(name.size() - 9) == "_eval.csv")
      inputs.push_back(e.path());
  }
  std::sort(inputs.begin(), inputs.end());
  for (const auto& p : inputs) {
    std::ifstream is(p);
    std::string line;
    bool header = true;
    while (std::getline(is, line)) {
      if (header) {
        header = false;
        continue;
      }
      if (!line.empty()) lines.push_back(line);
    }
  }
  if (found_manifest && inputs.empty())
    res.warnings.push_back("partial run: manifest present but no eval CSVs");
  if (!found_manifest && inputs.empty())
    res.warnings.push_back("empty directory: nothing to report");
  std::ofstream os(std::filesystem::path(dir) / "report.csv");
  os << "algorithm,seed,mean_weighted_sum_rate,rate_violation_fraction,"
        "l_abs_mean,flops_per_decision\n";
  for (const auto& l : lines) os << l << "\n";
  res.rows = lines.size();
  return res;
}

}  // namespace cfnet
