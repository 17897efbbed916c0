#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "morphco/morpho.hpp"
#include "morphco/optim.hpp"
#include "morphco/rng.hpp"
#include "morphco/scenarios.hpp"
#include "morphco/sim.hpp"
#include "morphco/taskmap.hpp"

#include "json.hpp"

// Experiment orchestration: the per-task co-design loop, the four baselines,
// online training of the mapping with buffer admission, batch evaluation
// with shared task seeds, and deterministic result files.
//
// Per outer iteration the loop runs one differentiable rollout, pulls the
// design-vector gradient through the morphology chain, takes one
// box-constrained quasi-Newton step on the control sequence and then one on
// the design vector (line searches re-simulate with the partner frozen), and
// finally updates the regression model one SGD step when training.

namespace morphco::harness {

using scen::Scenario;

inline const std::vector<std::string>& all_baselines() {
  static const std::vector<std::string> b{"task2morph", "task2morph_f", "diffhand", "diffhand_f"};
  return b;
}

inline bool baseline_is_frozen(const std::string& b) {
  return b == "task2morph_f" || b == "diffhand_f";
}
inline bool baseline_uses_model(const std::string& b) {
  return b == "task2morph" || b == "task2morph_f";
}
inline void validate_baseline(const std::string& b) {
  const auto& all = all_baselines();
  if (std::find(all.begin(), all.end(), b) == all.end())
    throw std::invalid_argument("unknown baseline: " + b);
}

struct RunConfig {
  Scenario scenario = Scenario::flipbox;
  std::vector<std::string> baselines = all_baselines();
  int n_train_tasks = 150;
  int n_eval_tasks = 20;
  int iter_max = 100;
  std::uint64_t seed = 0;
  std::string out_dir = "results";
  scen::ScenarioConfig scenario_cfg = scen::default_config(Scenario::flipbox);

  double control_init_amplitude = 1.0;
  double convergence_tol = 1e-5;
  int lbfgs_memory = 10;
  taskmap::MapTrainConfig map_cfg;
  int warmup_tasks = 20;          // tasks observed before freezing l_max
  double lmax_percentile = 0.60;
  bool dump_trajectories = false;
  int threads = 0;  // 0 = hardware concurrency

  void set_scenario(Scenario s) {
    scenario = s;
    scenario_cfg = scen::default_config(s);
  }
};

struct IterTelemetry {
  int iter = 0;
  double loss = 0.0;
  double grad_p_norm = 0.0;
  double grad_c_norm = 0.0;
  double step_c = 0.0;
  double step_p = 0.0;
};

struct RunRecord {
  std::string baseline;
  std::string phase;  // "train" or "eval"
  int task_index = 0;
  std::uint64_t task_seed = 0;
  Eigen::VectorXd features;      // raw (physical units)
  Eigen::VectorXd p_init, p_final;
  Eigen::MatrixXd c_final;
  std::vector<double> loss_curve;  // one entry per simulation episode
  double final_loss = 0.0;
  int episodes = 0;
  int iterations = 0;
  bool converged = false;
  bool diverged = false;
  bool admitted = false;
  double wall_ms = 0.0;  // diagnostics only, kept out of the canonical files
  std::vector<IterTelemetry> telemetry;
};

namespace detail {

inline Eigen::VectorXd control_to_vec(const sim::ControlSeq& c) {
  Eigen::VectorXd v(c.torques.size());
  int pos = 0;
  for (int t = 0; t < c.torques.rows(); ++t)
    for (int j = 0; j < 3; ++j) v[pos++] = c.torques(t, j);
  return v;
}

inline sim::ControlSeq vec_to_control(const Eigen::VectorXd& v, int horizon) {
  sim::ControlSeq c{Eigen::MatrixXd(horizon, 3)};
  int pos = 0;
  for (int t = 0; t < horizon; ++t)
    for (int j = 0; j < 3; ++j) c.torques(t, j) = v[pos++];
  return c;
}

inline std::uint64_t task_seed(std::uint64_t master, const char* tag, int index) {
  return derive_seed(derive_seed(master, hash_str(tag)), static_cast<std::uint64_t>(index));
}

}  // namespace detail

// The per-task co-design loop. When `train_model` is non-null the regression
// model is updated once per iteration (online training); evaluation passes
// null and leaves model and buffer untouched.
inline RunRecord optimize_task(const scen::ScenarioInstance& inst,
                               const morpho::MorphModel& morph, const morpho::MorphParams& p0,
                               bool optimize_p, const RunConfig& cfg, std::uint64_t control_seed,
                               taskmap::RegressionModel* train_model = nullptr,
                               const taskmap::ExperienceBuffer* train_buffer = nullptr,
                               Rng* train_rng = nullptr, const Eigen::VectorXd* t_norm = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  const int horizon = inst.cfg.horizon;

  Rng crng(derive_seed(control_seed, hash_str("ctrl-init")));
  sim::ControlSeq ctrl = sim::ControlSeq::random(horizon, cfg.control_init_amplitude, crng);

  const optim::BoxBounds bounds_c =
      optim::BoxBounds::uniform(3 * horizon, -inst.cfg.tau_max, inst.cfg.tau_max);
  const optim::BoxBounds bounds_p = optim::BoxBounds::uniform(
      morpho::kDesignDim, morph.spec().design_lo, morph.spec().design_hi);
  optim::LbfgsbMemory mem_c(cfg.lbfgs_memory), mem_p(cfg.lbfgs_memory);

  morpho::MorphParams p = p0;
  morpho::SimParams s = morph.derive(p);

  RunRecord rec;
  rec.features = inst.features.values;
  rec.p_init = p.values;
  rec.task_seed = control_seed;

  double cur_loss = 0.0;
  bool have_loss = false;
  int consecutive_stalls = 0;

  for (int iter = 0; iter < cfg.iter_max; ++iter) {
    const sim::RolloutResult rr = sim::rollout(s, ctrl, inst);
    ++rec.episodes;
    rec.loss_curve.push_back(rr.loss);
    rec.diverged = rec.diverged || rr.diverged;
    cur_loss = rr.loss;
    have_loss = true;

    Eigen::VectorXd grad_p = Eigen::VectorXd::Zero(morpho::kDesignDim);
    if (optimize_p) grad_p = morph.jacobian(p).transpose() * rr.grad_S;
    const Eigen::VectorXd grad_c = detail::control_to_vec(sim::ControlSeq{rr.grad_C});

    const Eigen::VectorXd pg_p = optim::projected_gradient(p.values, grad_p, bounds_p);
    const Eigen::VectorXd pg_c =
        optim::projected_gradient(detail::control_to_vec(ctrl), grad_c, bounds_c);

    IterTelemetry tel;
    tel.iter = iter;
    tel.loss = rr.loss;
    tel.grad_p_norm = pg_p.cwiseAbs().maxCoeff();
    tel.grad_c_norm = pg_c.cwiseAbs().maxCoeff();

    rec.iterations = iter + 1;
    if (optim::check_convergence(pg_p, pg_c, cfg.convergence_tol)) {
      rec.converged = !rr.diverged;
      rec.telemetry.push_back(tel);
      break;
    }

    // control step; line-search evaluations are counted as episodes
    auto obj_c = [&](const Eigen::VectorXd& cx) {
      const double l = sim::loss_only(s, detail::vec_to_control(cx, horizon), inst);
      ++rec.episodes;
      rec.loss_curve.push_back(l);
      return l;
    };
    const optim::OptStepReport rep_c = optim::lbfgsb_step(
        detail::control_to_vec(ctrl), cur_loss, grad_c, bounds_c, mem_c, obj_c, 0.0);
    double loss_after_c = cur_loss;
    if (!rep_c.line_search_failed && !rep_c.converged) {
      ctrl = detail::vec_to_control(rep_c.new_point, horizon);
      loss_after_c = rep_c.f_value;
    }
    tel.step_c = rep_c.step_size;

    // design step against the already-updated control sequence
    bool p_failed = true;
    if (optimize_p) {
      auto obj_p = [&](const Eigen::VectorXd& px) {
        double l = sim::kDivergedLossCap;
        try {
          l = sim::loss_only(morph.derive(morpho::MorphParams::from(px)), ctrl, inst);
        } catch (const morpho::DegenerateShape&) {
          l = sim::kDivergedLossCap;
        }
        ++rec.episodes;
        rec.loss_curve.push_back(l);
        return l;
      };
      const optim::OptStepReport rep_p =
          optim::lbfgsb_step(p.values, loss_after_c, grad_p, bounds_p, mem_p, obj_p, 0.0);
      if (!rep_p.line_search_failed && !rep_p.converged) {
        p = morpho::MorphParams::from(rep_p.new_point);
        s = morph.derive(p);
        cur_loss = rep_p.f_value;
        p_failed = false;
      } else {
        cur_loss = loss_after_c;
      }
      tel.step_p = rep_p.step_size;
    } else {
      cur_loss = loss_after_c;
    }
    rec.telemetry.push_back(tel);

    if (train_model != nullptr)
      taskmap::online_update(*train_model, *train_buffer, *t_norm, p.values, cfg.map_cfg,
                             *train_rng);

    // two consecutive iterations in which no line search made progress means
    // even the raw projected-gradient direction is unusable; further
    // iterations would repeat identical work
    const bool stalled = rep_c.line_search_failed && (!optimize_p || p_failed);
    consecutive_stalls = stalled ? consecutive_stalls + 1 : 0;
    if (consecutive_stalls >= 2) break;
  }

  rec.p_final = p.values;
  rec.c_final = ctrl.torques;
  rec.final_loss = have_loss ? cur_loss : sim::kDivergedLossCap;
  rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                    .count();
  return rec;
}

// ---------------------------------------------------------------------------
// Training phase: Algorithm-style online loop over freshly sampled tasks.

struct TrainOutput {
  taskmap::RegressionModel model{std::vector<int>{1, 1}, 0.0, 1.0};
  taskmap::ExperienceBuffer buffer;
  std::vector<RunRecord> records;
  double l_max = sim::kDivergedLossCap;
};

inline double nearest_rank_percentile(std::vector<double> v, double p) {
  if (v.empty()) return sim::kDivergedLossCap;
  std::sort(v.begin(), v.end());
  const int n = static_cast<int>(v.size());
  int idx = static_cast<int>(std::ceil(p * n)) - 1;
  idx = std::max(0, std::min(idx, n - 1));
  return v[static_cast<std::size_t>(idx)];
}

inline taskmap::RegressionModel fresh_model(const RunConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, hash_str("model-init")));
  return taskmap::RegressionModel({scen::feature_dim(cfg.scenario), 32, 32, morpho::kDesignDim},
                                  cfg.scenario_cfg.robot.design_lo,
                                  cfg.scenario_cfg.robot.design_hi, rng);
}

inline TrainOutput train_mapping(const RunConfig& cfg) {
  TrainOutput out;
  out.model = fresh_model(cfg);
  out.buffer = taskmap::ExperienceBuffer(100);
  Rng train_rng(derive_seed(cfg.seed, hash_str("minibatch")));
  const morpho::MorphModel morph(cfg.scenario_cfg.robot);

  // During the warmup window anything below the divergence cap is admitted;
  // after it the threshold freezes at the configured percentile of the
  // warmup losses.
  double l_max = sim::kDivergedLossCap;
  std::vector<double> warmup_losses;

  for (int i = 0; i < cfg.n_train_tasks; ++i) {
    const std::uint64_t seed_i = detail::task_seed(cfg.seed, "train-task", i);
    const scen::ScenarioInstance inst = scen::sample_task(cfg.scenario_cfg, seed_i);
    const Eigen::VectorXd t_norm = scen::normalize_features(cfg.scenario_cfg, inst.features.values);
    const morpho::MorphParams p0 = morpho::MorphParams::from(out.model.predict(t_norm));

    RunRecord rec = optimize_task(inst, morph, p0, /*optimize_p=*/true, cfg, seed_i, &out.model,
                                  &out.buffer, &train_rng, &t_norm);
    rec.baseline = "task2morph";
    rec.phase = "train";
    rec.task_index = i;
    rec.admitted = out.buffer.admit(t_norm, rec.p_final, rec.final_loss, l_max);

    if (static_cast<int>(warmup_losses.size()) < cfg.warmup_tasks) {
      warmup_losses.push_back(rec.final_loss);
      if (static_cast<int>(warmup_losses.size()) == cfg.warmup_tasks)
        l_max = nearest_rank_percentile(warmup_losses, cfg.lmax_percentile);
    }
    out.records.push_back(std::move(rec));
  }
  out.l_max = l_max;
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation phase: shared task seeds across baselines, optional parallelism
// across tasks (each task is self-contained, so results are identical
// regardless of scheduling).

inline void parallel_for(int n, int threads, const std::function<void(int)>& body) {
  if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  for (int w = 0; w < threads; ++w)
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) body(i);
    });
  for (auto& th : pool) th.join();
}

inline std::vector<RunRecord> evaluate_baseline(const RunConfig& cfg, const std::string& baseline,
                                                const taskmap::RegressionModel* model) {
  validate_baseline(baseline);
  if (baseline_uses_model(baseline) && model == nullptr)
    throw std::invalid_argument(baseline + " requires a trained model");
  const morpho::MorphModel morph(cfg.scenario_cfg.robot);
  std::vector<RunRecord> records(static_cast<std::size_t>(cfg.n_eval_tasks));
  parallel_for(cfg.n_eval_tasks, cfg.threads, [&](int i) {
    const std::uint64_t seed_i = detail::task_seed(cfg.seed, "eval-task", i);
    const scen::ScenarioInstance inst = scen::sample_task(cfg.scenario_cfg, seed_i);
    morpho::MorphParams p0 = morpho::MorphParams::ones();
    if (baseline_uses_model(baseline)) {
      const Eigen::VectorXd t_norm =
          scen::normalize_features(cfg.scenario_cfg, inst.features.values);
      p0 = morpho::MorphParams::from(model->predict(t_norm));
    }
    RunRecord rec =
        optimize_task(inst, morph, p0, /*optimize_p=*/!baseline_is_frozen(baseline), cfg, seed_i);
    rec.baseline = baseline;
    rec.phase = "eval";
    rec.task_index = i;
    records[static_cast<std::size_t>(i)] = std::move(rec);
  });
  return records;
}

// Spec-facing wrappers ------------------------------------------------------

inline RunRecord run_task2morph(const scen::ScenarioInstance& inst,
                                taskmap::RegressionModel& model,
                                taskmap::ExperienceBuffer& buffer, const RunConfig& cfg,
                                std::uint64_t seed, double l_max, Rng& train_rng) {
  const morpho::MorphModel morph(cfg.scenario_cfg.robot);
  const Eigen::VectorXd t_norm = scen::normalize_features(cfg.scenario_cfg, inst.features.values);
  const morpho::MorphParams p0 = morpho::MorphParams::from(model.predict(t_norm));
  RunRecord rec =
      optimize_task(inst, morph, p0, true, cfg, seed, &model, &buffer, &train_rng, &t_norm);
  rec.baseline = "task2morph";
  rec.admitted = buffer.admit(t_norm, rec.p_final, rec.final_loss, l_max);
  return rec;
}

inline RunRecord run_baseline(const scen::ScenarioInstance& inst, const RunConfig& cfg,
                              const std::string& baseline, std::uint64_t seed,
                              const taskmap::RegressionModel* model = nullptr) {
  validate_baseline(baseline);
  if (baseline == "task2morph")
    throw std::invalid_argument("run_baseline handles the non-learning baselines");
  const morpho::MorphModel morph(cfg.scenario_cfg.robot);
  morpho::MorphParams p0 = morpho::MorphParams::ones();
  if (baseline == "task2morph_f") {
    if (!model) throw std::invalid_argument("task2morph_f requires a model");
    p0 = morpho::MorphParams::from(
        model->predict(scen::normalize_features(cfg.scenario_cfg, inst.features.values)));
  }
  RunRecord rec = optimize_task(inst, morph, p0, !baseline_is_frozen(baseline), cfg, seed);
  rec.baseline = baseline;
  return rec;
}

// ---------------------------------------------------------------------------
// Plot data and result files.

inline std::vector<double> moving_average(const std::vector<double>& v, int window) {
  const int n = static_cast<int>(v.size());
  const int half = window / 2;
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int a = std::max(0, i - half);
    const int b = std::min(n - 1, i + half);
    double acc = 0.0;
    for (int k = a; k <= b; ++k) acc += v[static_cast<std::size_t>(k)];
    out[static_cast<std::size_t>(i)] = acc / (b - a + 1);
  }
  return out;
}

struct CurveStats {
  std::vector<double> mean, stddev, mean_smooth, stddev_smooth;
};

// Curves are aligned per episode; tasks that stopped early hold their final
// loss for the remaining episodes.
inline CurveStats curve_stats(const std::vector<const RunRecord*>& records, int smooth_window = 5) {
  CurveStats cs;
  std::size_t len = 0;
  for (const RunRecord* r : records) len = std::max(len, r->loss_curve.size());
  if (len == 0 || records.empty()) return cs;
  cs.mean.resize(len);
  cs.stddev.resize(len);
  for (std::size_t e = 0; e < len; ++e) {
    double m = 0.0;
    for (const RunRecord* r : records)
      m += e < r->loss_curve.size() ? r->loss_curve[e] : r->loss_curve.back();
    m /= static_cast<double>(records.size());
    double var = 0.0;
    for (const RunRecord* r : records) {
      const double x = e < r->loss_curve.size() ? r->loss_curve[e] : r->loss_curve.back();
      var += (x - m) * (x - m);
    }
    cs.mean[e] = m;
    cs.stddev[e] = std::sqrt(var / static_cast<double>(records.size()));
  }
  cs.mean_smooth = moving_average(cs.mean, smooth_window);
  cs.stddev_smooth = moving_average(cs.stddev, smooth_window);
  return cs;
}

inline double win_rate(const std::vector<RunRecord>& challenger,
                       const std::vector<RunRecord>& incumbent) {
  if (challenger.empty() || challenger.size() != incumbent.size()) return 0.0;
  int wins = 0;
  for (std::size_t i = 0; i < challenger.size(); ++i)
    if (challenger[i].final_loss < incumbent[i].final_loss) ++wins;
  return static_cast<double>(wins) / static_cast<double>(challenger.size());
}

namespace detail {

inline std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline nlohmann::json vec_json(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

inline Eigen::VectorXd json_vec(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<int>(v.size()));
}

}  // namespace detail

inline nlohmann::json record_to_json(const RunRecord& r) {
  nlohmann::json j;
  j["baseline"] = r.baseline;
  j["phase"] = r.phase;
  j["task_index"] = r.task_index;
  j["task_seed"] = r.task_seed;
  j["features"] = detail::vec_json(r.features);
  j["p_init"] = detail::vec_json(r.p_init);
  j["p_final"] = detail::vec_json(r.p_final);
  std::vector<double> cflat(static_cast<std::size_t>(r.c_final.size()));
  for (int t = 0; t < r.c_final.rows(); ++t)
    for (int k = 0; k < 3; ++k) cflat[static_cast<std::size_t>(3 * t + k)] = r.c_final(t, k);
  j["c_final"] = cflat;
  j["loss_curve"] = r.loss_curve;
  j["final_loss"] = r.final_loss;
  j["episodes"] = r.episodes;
  j["iterations"] = r.iterations;
  j["converged"] = r.converged;
  j["diverged"] = r.diverged;
  j["admitted"] = r.admitted;
  return j;
}

inline RunRecord record_from_json(const nlohmann::json& j) {
  RunRecord r;
  r.baseline = j.at("baseline");
  r.phase = j.at("phase");
  r.task_index = j.at("task_index");
  r.task_seed = j.at("task_seed");
  r.features = detail::json_vec(j.at("features"));
  r.p_init = detail::json_vec(j.at("p_init"));
  r.p_final = detail::json_vec(j.at("p_final"));
  const auto cflat = j.at("c_final").get<std::vector<double>>();
  const int horizon = static_cast<int>(cflat.size() / 3);
  r.c_final.resize(horizon, 3);
  for (int t = 0; t < horizon; ++t)
    for (int k = 0; k < 3; ++k) r.c_final(t, k) = cflat[static_cast<std::size_t>(3 * t + k)];
  r.loss_curve = j.at("loss_curve").get<std::vector<double>>();
  r.final_loss = j.at("final_loss");
  r.episodes = j.at("episodes");
  r.iterations = j.at("iterations");
  r.converged = j.at("converged");
  r.diverged = j.at("diverged");
  r.admitted = j.value("admitted", false);
  return r;
}

inline void write_tasks_jsonl(const std::string& path, const std::vector<RunRecord>& records) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  for (const auto& r : records) os << record_to_json(r).dump() << "\n";
}

inline std::vector<RunRecord> read_tasks_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  std::vector<RunRecord> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    out.push_back(record_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

inline void write_telemetry_jsonl(const std::string& path, const std::vector<RunRecord>& records) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  for (const auto& r : records)
    for (const auto& t : r.telemetry) {
      nlohmann::json j{{"baseline", r.baseline}, {"phase", r.phase},
                       {"task", r.task_index},   {"iter", t.iter},
                       {"loss", t.loss},         {"grad_p_norm", t.grad_p_norm},
                       {"grad_c_norm", t.grad_c_norm}, {"step_c", t.step_c},
                       {"step_p", t.step_p}};
      os << j.dump() << "\n";
    }
}

inline void write_timing_csv(const std::string& path, const std::vector<RunRecord>& records) {
  std::ofstream os(path);
  os << "phase,baseline,task,wall_ms\n";
  for (const auto& r : records)
    os << r.phase << "," << r.baseline << "," << r.task_index << "," << detail::fmt17(r.wall_ms)
       << "\n";
}

// Per-baseline per-episode mean/std of the evaluation loss curves, raw and
// smoothed with a centered window of 5 (clipped at the ends).
inline void write_curves_csv(const std::string& path, const std::vector<RunRecord>& records) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "baseline,episode,mean,std,mean_smoothed,std_smoothed\n";
  for (const std::string& b : all_baselines()) {
    std::vector<const RunRecord*> recs;
    for (const auto& r : records)
      if (r.phase == "eval" && r.baseline == b) recs.push_back(&r);
    if (recs.empty()) continue;
    const CurveStats cs = curve_stats(recs);
    for (std::size_t e = 0; e < cs.mean.size(); ++e)
      os << b << "," << e << "," << detail::fmt17(cs.mean[e]) << "," << detail::fmt17(cs.stddev[e])
         << "," << detail::fmt17(cs.mean_smooth[e]) << "," << detail::fmt17(cs.stddev_smooth[e])
         << "\n";
  }
}

// Per-task final losses, one row per evaluation task, one column per
// evaluated baseline.
inline void write_scatter_csv(const std::string& path, const std::vector<RunRecord>& records) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  std::vector<std::string> present;
  int n_tasks = 0;
  for (const std::string& b : all_baselines()) {
    bool any = false;
    for (const auto& r : records)
      if (r.phase == "eval" && r.baseline == b) {
        any = true;
        n_tasks = std::max(n_tasks, r.task_index + 1);
      }
    if (any) present.push_back(b);
  }
  os << "task";
  for (const auto& b : present) os << "," << b;
  os << "\n";
  for (int i = 0; i < n_tasks; ++i) {
    os << i;
    for (const auto& b : present) {
      const RunRecord* found = nullptr;
      for (const auto& r : records)
        if (r.phase == "eval" && r.baseline == b && r.task_index == i) found = &r;
      os << ",";
      if (found) os << detail::fmt17(found->final_loss);
    }
    os << "\n";
  }
}

inline nlohmann::json summary_json(const std::vector<RunRecord>& records) {
  nlohmann::json j;
  std::map<std::string, std::vector<RunRecord>> by;
  for (const auto& r : records)
    if (r.phase == "eval") by[r.baseline].push_back(r);
  for (auto& [b, recs] : by) {
    std::sort(recs.begin(), recs.end(),
              [](const RunRecord& a, const RunRecord& c) { return a.task_index < c.task_index; });
    double mean = 0.0;
    int diverged = 0;
    for (const auto& r : recs) {
      mean += r.final_loss;
      diverged += r.diverged ? 1 : 0;
    }
    mean /= recs.empty() ? 1.0 : static_cast<double>(recs.size());
    j["baselines"][b] = {{"n", recs.size()}, {"mean_final_loss", mean}, {"diverged", diverged}};
  }
  if (by.count("task2morph_f") && by.count("diffhand_f"))
    j["win_rate"]["task2morph_f_vs_diffhand_f"] =
        win_rate(by["task2morph_f"], by["diffhand_f"]);
  if (by.count("task2morph") && by.count("diffhand"))
    j["win_rate"]["task2morph_vs_diffhand"] = win_rate(by["task2morph"], by["diffhand"]);

  // smoothed mean loss at a quarter of the shared episode budget
  if (by.count("task2morph") && by.count("diffhand")) {
    std::vector<const RunRecord*> a, d;
    for (const auto& r : by["task2morph"]) a.push_back(&r);
    for (const auto& r : by["diffhand"]) d.push_back(&r);
    const CurveStats ca = curve_stats(a), cd = curve_stats(d);
    const std::size_t budget = std::max(ca.mean.size(), cd.mean.size());
    if (budget > 0) {
      const std::size_t idx = std::max<std::size_t>(1, budget / 4) - 1;
      auto at = [](const std::vector<double>& v, std::size_t i) {
        if (v.empty()) return 0.0;
        return v[std::min(i, v.size() - 1)];
      };
      j["early_loss"] = {{"budget", budget},
                         {"episode", idx},
                         {"task2morph", at(ca.mean_smooth, idx)},
                         {"diffhand", at(cd.mean_smooth, idx)}};
    }
  }
  return j;
}

inline nlohmann::json config_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["scenario"] = scen::to_string(cfg.scenario);
  j["baselines"] = cfg.baselines;
  j["n_train_tasks"] = cfg.n_train_tasks;
  j["n_eval_tasks"] = cfg.n_eval_tasks;
  j["iter_max"] = cfg.iter_max;
  j["seed"] = cfg.seed;
  j["control_init_amplitude"] = cfg.control_init_amplitude;
  j["convergence_tol"] = cfg.convergence_tol;
  j["lbfgs_memory"] = cfg.lbfgs_memory;
  j["map"] = {{"alpha", cfg.map_cfg.alpha},
              {"minibatch", cfg.map_cfg.minibatch},
              {"learning_rate", cfg.map_cfg.learning_rate}};
  j["warmup_tasks"] = cfg.warmup_tasks;
  j["lmax_percentile"] = cfg.lmax_percentile;
  j["scenario_config"] = scen::config_to_json(cfg.scenario_cfg);
  return j;
}

inline void write_morphologies_jsonl(const std::string& path,
                                     const std::vector<RunRecord>& records,
                                     const morpho::MorphModel& morph) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  for (const auto& r : records) {
    if (r.phase != "eval") continue;
    nlohmann::json j;
    j["baseline"] = r.baseline;
    j["task"] = r.task_index;
    j["initial"] = morpho::snapshot_json(morpho::MorphParams::from(r.p_init), morph);
    j["final"] = morpho::snapshot_json(morpho::MorphParams::from(r.p_final), morph);
    os << j.dump() << "\n";
  }
}

inline void dump_trajectory(const std::string& path, const morpho::MorphModel& morph,
                            const RunRecord& rec, const scen::ScenarioInstance& inst) {
  const morpho::SimParams s = morph.derive(morpho::MorphParams::from(rec.p_final));
  std::vector<sim::SimState> traj;
  bool diverged = false;
  std::vector<double> tau(static_cast<std::size_t>(rec.c_final.size()));
  for (int t = 0; t < rec.c_final.rows(); ++t)
    for (int k = 0; k < 3; ++k) tau[static_cast<std::size_t>(3 * t + k)] = rec.c_final(t, k);
  sim::simulate<double>(s, tau, inst, &traj, &diverged);
  std::ofstream os(path);
  for (const auto& st : traj) {
    nlohmann::json j{{"q", st.q}, {"qdot", st.qdot}, {"object", st.object}};
    os << j.dump() << "\n";
  }
}

// Full protocol: optional training phase, evaluation of the requested
// baselines on shared task seeds, result files under cfg.out_dir.
inline void run_experiment(const RunConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  const morpho::MorphModel morph(cfg.scenario_cfg.robot);

  std::vector<RunRecord> records;
  bool trained = false;
  TrainOutput train;
  const bool needs_model = std::any_of(cfg.baselines.begin(), cfg.baselines.end(),
                                       [](const std::string& b) { return baseline_uses_model(b); });
  if (needs_model) {
    train = train_mapping(cfg);
    trained = true;
    train.model.save((fs::path(cfg.out_dir) / "model.ckpt").string());
    train.buffer.save_jsonl((fs::path(cfg.out_dir) / "buffer.jsonl").string());
    for (auto& r : train.records) records.push_back(std::move(r));
  }

  for (const std::string& b : cfg.baselines) {
    std::vector<RunRecord> recs = evaluate_baseline(cfg, b, trained ? &train.model : nullptr);
    for (auto& r : recs) records.push_back(std::move(r));
  }

  write_tasks_jsonl((fs::path(cfg.out_dir) / "tasks.jsonl").string(), records);
  write_telemetry_jsonl((fs::path(cfg.out_dir) / "telemetry.jsonl").string(), records);
  write_timing_csv((fs::path(cfg.out_dir) / "timing.csv").string(), records);
  write_curves_csv((fs::path(cfg.out_dir) / "curves.csv").string(), records);
  write_scatter_csv((fs::path(cfg.out_dir) / "scatter.csv").string(), records);
  write_morphologies_jsonl((fs::path(cfg.out_dir) / "morphologies.jsonl").string(), records, morph);
  {
    std::ofstream os((fs::path(cfg.out_dir) / "summary.json").string());
    os << summary_json(records).dump(2) << "\n";
  }
  {
    std::ofstream os((fs::path(cfg.out_dir) / "config.json").string());
    os << config_json(cfg).dump(2) << "\n";
  }
  if (cfg.dump_trajectories) {
    const fs::path tdir = fs::path(cfg.out_dir) / "trajectories";
    fs::create_directories(tdir);
    for (const auto& r : records) {
      if (r.phase != "eval") continue;
      const scen::ScenarioInstance inst = scen::sample_task(cfg.scenario_cfg, r.task_seed);
      dump_trajectory((tdir / (r.baseline + "_task" + std::to_string(r.task_index) + ".jsonl"))
                          .string(),
                      morph, r, inst);
    }
  }
}

// Regenerate the derived CSV/summary files from tasks.jsonl.
inline void regenerate_reports(const std::string& dir) {
  namespace fs = std::filesystem;
  const std::vector<RunRecord> records = read_tasks_jsonl((fs::path(dir) / "tasks.jsonl").string());
  write_curves_csv((fs::path(dir) / "curves.csv").string(), records);
  write_scatter_csv((fs::path(dir) / "scatter.csv").string(), records);
  std::ofstream os((fs::path(dir) / "summary.json").string());
  os << summary_json(records).dump(2) << "\n";
}

}  // namespace morphco::harness
