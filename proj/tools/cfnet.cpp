// Command-line front end: dataset generation, training, transfer, baselines,
// sweeps, the label-noise robustness lab, gradient checking, and reporting.

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cfnet/experiment.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr int kExitMissingInput = 3;

struct CommonFlags {
  std::string config_path;
  std::string output_dir;
  long long seed = -1;
  std::string scheme;
  long long epochs = -1;
  double lr = -1.0;
  long long batch = -1;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("-c,--config", f.config_path, "JSON config file");
  cmd->add_option("-o,--output-dir", f.output_dir,
                  "Output directory (overrides config)");
  cmd->add_option("--seed", f.seed, "Seed (overrides config)");
  cmd->add_option("--scheme", f.scheme,
                  "Loss scheme: S1, S2, B1, B2, B3 (overrides config)");
  cmd->add_option("--epochs", f.epochs, "Training epochs (overrides config)");
  cmd->add_option("--lr", f.lr, "Learning rate (overrides config)");
  cmd->add_option("--batch", f.batch, "Mini-batch size (overrides config)");
}

cfnet::ExperimentConfig resolve(const CommonFlags& f) {
  cfnet::ExperimentConfig cfg;
  if (!f.config_path.empty()) cfg = cfnet::load_config(f.config_path);
  if (!f.output_dir.empty()) cfg.output_dir = f.output_dir;
  if (f.seed >= 0) cfg.seed = static_cast<std::uint64_t>(f.seed);
  if (!f.scheme.empty()) {
    const auto s = cfnet::detail::parse_scheme(f.scheme);
    if (!s)
      throw cfnet::ConfigError(
          {"train.scheme: must be one of S1, S2, B1, B2, B3"});
    cfg.train.scheme = *s;
  }
  if (f.epochs >= 0) cfg.train.epochs = static_cast<std::size_t>(f.epochs);
  if (f.lr >= 0.0) cfg.train.lr = f.lr;
  if (f.batch >= 1) cfg.train.batch = static_cast<std::size_t>(f.batch);
  cfg.channel.seed = cfg.seed;
  cfg.train.seed = cfg.seed;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cell-free MIMO subcarrier allocation + beamforming lab"};
  app.require_subcommand(1);

  CommonFlags gen_f, cm_f, dm_f, datl_f, base_f, sweep_f, rob_f, grad_f;
  std::string sweep_axis;
  std::vector<std::size_t> sweep_values;
  double rob_eta_max = 0.4;
  std::size_t rob_z = 5;
  std::string report_dir = "out";

  auto* gen = app.add_subcommand("gen-data", "Generate channel datasets");
  add_common(gen, gen_f);
  auto* cm = app.add_subcommand("train-cmtssl", "Centralized training");
  add_common(cm, cm_f);
  auto* dm = app.add_subcommand("train-dmtssl", "Distributed training");
  add_common(dm, dm_f);
  auto* datl = app.add_subcommand("transfer-datl",
                                  "Distance-aware transfer study (B -> B+1)");
  add_common(datl, datl_f);
  auto* base = app.add_subcommand("baseline", "RSA/GSA + ZF baselines");
  add_common(base, base_f);
  auto* sweep = app.add_subcommand("sweep", "Axis sweep plot data");
  add_common(sweep, sweep_f);
  sweep->add_option("--axis", sweep_axis, "Sweep axis: B, I or N");
  sweep->add_option("--values", sweep_values, "Sorted positive values")
      ->delimiter(',');
  auto* rob = app.add_subcommand("robustness-lab",
                                 "Symmetric label-noise tolerance study");
  add_common(rob, rob_f);
  rob->add_option("--classes", rob_z, "Number of blob classes");
  rob->add_option("--eta-max", rob_eta_max, "Largest noise rate");
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check");
  add_common(grad, grad_f);
  auto* rep = app.add_subcommand("report", "Merge eval CSVs");
  rep->add_option("-o,--output-dir", report_dir, "Directory to merge");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      cfnet::run_gen_data(resolve(gen_f));
    } else if (cm->parsed()) {
      const auto s = cfnet::run_train_cmtssl(resolve(cm_f));
      std::printf("cmtssl: steps=%zu skipped=%zu final_joint_loss=%.6g "
                  "mean_sum_rate=%.6g\n",
                  s.steps, s.skipped_steps, s.final_joint_loss,
                  s.eval.mean_weighted_sum_rate);
    } else if (dm->parsed()) {
      const auto s = cfnet::run_train_dmtssl(resolve(dm_f));
      std::printf("dmtssl: steps=%zu skipped=%zu final_joint_loss=%.6g "
                  "mean_sum_rate=%.6g\n",
                  s.steps, s.skipped_steps, s.final_joint_loss,
                  s.eval.mean_weighted_sum_rate);
    } else if (datl->parsed()) {
      const auto r = cfnet::run_transfer_datl(resolve(datl_f));
      std::printf("datl: ratio=%.4f datl_steps=%zu retrain_steps=%zu\n",
                  r.ratio, r.datl_gradient_steps, r.retrain_gradient_steps);
    } else if (base->parsed()) {
      const auto b = cfnet::run_baseline(resolve(base_f));
      std::printf("baseline: rsa=%.6g gsa=%.6g\n",
                  b.rsa.mean_weighted_sum_rate, b.gsa.mean_weighted_sum_rate);
    } else if (sweep->parsed()) {
      auto cfg = resolve(sweep_f);
      if (!sweep_axis.empty()) {
        cfg.sweep.enabled = true;
        cfg.sweep.axis = sweep_axis;
        cfg.sweep.values = sweep_values;
        if (sweep_axis != "B" && sweep_axis != "I" && sweep_axis != "N")
          throw cfnet::ConfigError({"sweep.axis: must be one of B, I, N"});
        if (sweep_values.empty() ||
            !std::is_sorted(sweep_values.begin(), sweep_values.end()))
          throw cfnet::ConfigError(
              {"sweep.values: must be non-empty and sorted ascending"});
      }
      cfnet::run_sweep(cfg);
    } else if (rob->parsed()) {
      auto cfg = resolve(rob_f);
      cfnet::NoiseToleranceConfig lab;
      lab.z = rob_z;
      lab.seed = cfg.seed;
      lab.etas.clear();
      for (double e = 0.0; e <= rob_eta_max + 1e-12; e += 0.2)
        lab.etas.push_back(e);
      const auto rows = cfnet::run_robustness_lab(cfg, lab);
      for (const auto& r : rows)
        std::printf("robustness: loss=%s eta=%.2f acc=%.4f residual=%.4f\n",
                    r.loss_name.c_str(), r.eta, r.clean_test_acc,
                    r.identity_residual);
    } else if (grad->parsed()) {
      const auto r = cfnet::run_gradcheck(resolve(grad_f));
      std::printf("gradcheck: max_rel_error=%.3g over %zu entries\n",
                  r.max_rel_error, r.entries_checked);
      if (r.max_rel_error >= 1e-4) return kExitRuntime;
    } else if (rep->parsed()) {
      const auto r = cfnet::run_report(report_dir);
      for (const auto& w : r.warnings)
        std::fprintf(stderr, "warning: %s\n", w.c_str());
      std::printf("report: %zu rows\n", r.rows);
    }
  } catch (const cfnet::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const cfnet::MissingInputError& e) {
    std::fprintf(stderr, "missing input: %s\n", e.what());
    return kExitMissingInput;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitOk;
}
