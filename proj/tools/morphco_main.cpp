// Command-line driver: experiment runs, training-only and evaluation-only
// phases, report regeneration, and a few debug dumps.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "morphco/harness.hpp"

namespace {

namespace fs = std::filesystem;
using morphco::harness::RunConfig;

std::string default_out_root() {
  const char* env = std::getenv("MORPHCO_OUT");
  return env && *env ? env : ".";
}

struct CommonOpts {
  std::string scenario = "flipbox";
  std::string config_file;
  std::uint64_t seed = 0;
  int iter_max = 100;
  int threads = 0;
  std::string out;
  int horizon = -1;
  double dt = -1.0;
};

void add_common(CLI::App* cmd, CommonOpts& o, bool with_out = true) {
  cmd->add_option("--scenario", o.scenario, "reach|flipbox|rotateplank")
      ->check(CLI::IsMember({"reach", "flipbox", "rotateplank"}));
  cmd->add_option("--config", o.config_file, "scenario config JSON (CLI flags override it)");
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--iter-max", o.iter_max, "outer iterations per task");
  cmd->add_option("--threads", o.threads, "evaluation worker threads (0 = hardware)");
  cmd->add_option("--horizon", o.horizon, "override rollout horizon");
  cmd->add_option("--dt", o.dt, "override integration step");
  if (with_out) cmd->add_option("--out", o.out, "output directory");
}

RunConfig build_config(const CommonOpts& o, const std::string& subdir) {
  RunConfig cfg;
  cfg.set_scenario(morphco::scen::scenario_from_string(o.scenario));
  if (!o.config_file.empty()) {
    std::ifstream is(o.config_file);
    if (!is) throw CLI::ValidationError("--config", "cannot read " + o.config_file);
    nlohmann::json j;
    is >> j;
    cfg.scenario_cfg = morphco::scen::config_from_json(j);
    cfg.scenario = cfg.scenario_cfg.tag;
  }
  if (o.horizon > 0) {
    cfg.scenario_cfg.horizon = o.horizon;
    cfg.scenario_cfg.robot.control_horizon = o.horizon;
  }
  if (o.dt > 0) cfg.scenario_cfg.dt = o.dt;
  cfg.seed = o.seed;
  cfg.iter_max = o.iter_max;
  cfg.threads = o.threads;
  cfg.out_dir = o.out.empty()
                    ? (fs::path(default_out_root()) / (subdir + "_" + o.scenario)).string()
                    : o.out;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"task-conditioned morphology/control co-design experiments"};
  app.require_subcommand(1);

  // run -----------------------------------------------------------------
  CommonOpts run_o;
  std::vector<std::string> run_baselines;
  int run_train = 150, run_eval = 20;
  bool run_dump = false;
  CLI::App* runc = app.add_subcommand("run", "train (if needed) and evaluate baselines");
  add_common(runc, run_o);
  runc->add_option("--baseline", run_baselines,
                   "task2morph|task2morph_f|diffhand|diffhand_f (default: all)");
  runc->add_option("--train-tasks", run_train, "online training tasks");
  runc->add_option("--eval-tasks", run_eval, "evaluation tasks per baseline");
  runc->add_flag("--dump-trajectories", run_dump, "write per-task trajectory JSONL");

  // train ---------------------------------------------------------------
  CommonOpts train_o;
  int train_n = 150;
  CLI::App* trainc = app.add_subcommand("train", "training phase only; writes model checkpoint");
  add_common(trainc, train_o);
  trainc->add_option("--train-tasks", train_n, "online training tasks");

  // eval ----------------------------------------------------------------
  CommonOpts eval_o;
  std::string eval_model;
  std::vector<std::string> eval_baselines;
  int eval_n = 20;
  CLI::App* evalc = app.add_subcommand("eval", "evaluate baselines with an existing model");
  add_common(evalc, eval_o);
  evalc->add_option("--model", eval_model, "model checkpoint path");
  evalc->add_option("--baseline", eval_baselines, "baselines to evaluate");
  evalc->add_option("--eval-tasks", eval_n, "evaluation tasks per baseline");

  // report ----------------------------------------------------------------
  std::string report_in;
  CLI::App* repc = app.add_subcommand("report", "regenerate CSV reports from tasks.jsonl");
  repc->add_option("--in", report_in, "run directory")->required();

  // dump-weights ----------------------------------------------------------
  CommonOpts dw_o;
  std::string dw_out;
  CLI::App* dwc = app.add_subcommand("dump-weights", "write the link deformation weights as CSV");
  add_common(dwc, dw_o, false);
  dwc->add_option("--out", dw_out, "output CSV (default: stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (runc->parsed()) {
      RunConfig cfg = build_config(run_o, "run");
      if (!run_baselines.empty()) {
        for (const auto& b : run_baselines) morphco::harness::validate_baseline(b);
        cfg.baselines = run_baselines;
      }
      cfg.n_train_tasks = run_train;
      cfg.n_eval_tasks = run_eval;
      cfg.dump_trajectories = run_dump;
      morphco::harness::run_experiment(cfg);
      std::cout << "results written to " << cfg.out_dir << "\n";
    } else if (trainc->parsed()) {
      RunConfig cfg = build_config(train_o, "train");
      cfg.n_train_tasks = train_n;
      fs::create_directories(cfg.out_dir);
      morphco::harness::TrainOutput out = morphco::harness::train_mapping(cfg);
      out.model.save((fs::path(cfg.out_dir) / "model.ckpt").string());
      out.buffer.save_jsonl((fs::path(cfg.out_dir) / "buffer.jsonl").string());
      morphco::harness::write_tasks_jsonl((fs::path(cfg.out_dir) / "tasks.jsonl").string(),
                                          out.records);
      morphco::harness::write_telemetry_jsonl(
          (fs::path(cfg.out_dir) / "telemetry.jsonl").string(), out.records);
      morphco::harness::write_timing_csv((fs::path(cfg.out_dir) / "timing.csv").string(),
                                         out.records);
      std::ofstream os((fs::path(cfg.out_dir) / "config.json").string());
      os << morphco::harness::config_json(cfg).dump(2) << "\n";
      std::cout << "model written to " << cfg.out_dir << " (l_max=" << out.l_max << ")\n";
    } else if (evalc->parsed()) {
      RunConfig cfg = build_config(eval_o, "eval");
      cfg.n_eval_tasks = eval_n;
      cfg.n_train_tasks = 0;
      std::unique_ptr<morphco::taskmap::RegressionModel> model;
      if (!eval_model.empty())
        model = std::make_unique<morphco::taskmap::RegressionModel>(
            morphco::taskmap::RegressionModel::load(eval_model));
      if (!eval_baselines.empty()) {
        for (const auto& b : eval_baselines) morphco::harness::validate_baseline(b);
        cfg.baselines = eval_baselines;
      } else if (!model) {
        cfg.baselines = {"diffhand", "diffhand_f"};
      }
      fs::create_directories(cfg.out_dir);
      std::vector<morphco::harness::RunRecord> records;
      for (const auto& b : cfg.baselines) {
        auto recs = morphco::harness::evaluate_baseline(cfg, b, model.get());
        for (auto& r : recs) records.push_back(std::move(r));
      }
      morphco::harness::write_tasks_jsonl((fs::path(cfg.out_dir) / "tasks.jsonl").string(),
                                          records);
      morphco::harness::write_curves_csv((fs::path(cfg.out_dir) / "curves.csv").string(), records);
      morphco::harness::write_scatter_csv((fs::path(cfg.out_dir) / "scatter.csv").string(),
                                          records);
      std::ofstream os((fs::path(cfg.out_dir) / "summary.json").string());
      os << morphco::harness::summary_json(records).dump(2) << "\n";
      std::cout << "evaluation written to " << cfg.out_dir << "\n";
    } else if (repc->parsed()) {
      morphco::harness::regenerate_reports(report_in);
      std::cout << "reports regenerated in " << report_in << "\n";
    } else if (dwc->parsed()) {
      RunConfig cfg = build_config(dw_o, "weights");
      const morphco::morpho::LinkTemplate tpl(cfg.scenario_cfg.robot);
      if (dw_out.empty()) {
        morphco::cage::write_weights_csv(std::cout, tpl.weights());
      } else {
        std::ofstream os(dw_out);
        morphco::cage::write_weights_csv(os, tpl.weights());
        std::cout << "weights written to " << dw_out << "\n";
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
