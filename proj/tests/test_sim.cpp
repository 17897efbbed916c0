#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>

#include "morphco/morpho.hpp"
#include "morphco/rng.hpp"
#include "morphco/scenarios.hpp"
#include "morphco/sim.hpp"

using namespace morphco;

namespace {

scen::ScenarioInstance instance_for(scen::Scenario tag, std::uint64_t seed,
                                    const std::function<void(scen::ScenarioConfig&)>& tweak = {}) {
  scen::ScenarioConfig cfg = scen::default_config(tag);
  if (tweak) tweak(cfg);
  return scen::sample_task(cfg, seed);
}

morpho::SimParams params_for(const scen::ScenarioConfig& cfg, const morpho::MorphParams& p) {
  return morpho::MorphModel(cfg.robot).derive(p);
}

morpho::MorphParams random_morph(Rng& rng, double lo = 0.7, double hi = 1.6) {
  morpho::MorphParams p;
  for (int i = 0; i < morpho::kDesignDim; ++i) p.values[i] = rng.uniform(lo, hi);
  return p;
}

// relative max-norm disagreement between analytic and finite-difference
// gradients, scaled by the largest finite-difference magnitude
double rel_err(const Eigen::VectorXd& analytic, const Eigen::VectorXd& fd) {
  const double scale = std::max(fd.cwiseAbs().maxCoeff(), 1e-10);
  return (analytic - fd).cwiseAbs().maxCoeff() / scale;
}

}  // namespace

TEST_CASE("equilibrium: zero gravity and zero torque give a constant trajectory") {
  // targets placed exactly at the initial fingertip so the reach loss sits at
  // its minimum: the control gradient must vanish identically
  scen::ScenarioConfig cfg = scen::default_config(scen::Scenario::reach);
  cfg.gravity = 0.0;
  cfg.horizon = 120;
  cfg.robot.control_horizon = 120;
  const morpho::SimParams s = params_for(cfg, morpho::MorphParams::ones());
  std::array<double, 3> q0 = cfg.q_init;
  const Vec2d tip = sim::tip_position(s, q0);
  scen::TaskFeatures t;
  t.tag = scen::Scenario::reach;
  t.values.resize(8);
  for (int k = 0; k < 4; ++k) {
    t.values[2 * k] = tip.x;
    t.values[2 * k + 1] = tip.y;
  }
  const scen::ScenarioInstance inst = scen::make_instance(cfg, t);
  const sim::ControlSeq c = sim::ControlSeq::zeros(cfg.horizon);
  const sim::RolloutResult rr = sim::rollout(s, c, inst);
  REQUIRE_FALSE(rr.diverged);
  for (const auto& st : rr.trajectory)
    for (int k = 0; k < 3; ++k) {
      REQUIRE(st.q[static_cast<std::size_t>(k)] ==
              Catch::Approx(q0[static_cast<std::size_t>(k)]).margin(1e-12));
      REQUIRE(st.qdot[static_cast<std::size_t>(k)] == 0.0);
    }
  REQUIRE(rr.loss == Catch::Approx(0.0).margin(1e-18));
  REQUIRE(rr.grad_C.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("small-angle pendulum period matches the analytic value within 2%") {
  // link 1 is a uniform rod of length 1 and mass 1; links 2 and 3 carry a
  // vanishing fraction of the mass
  morpho::SimParams s;
  s.base = {0.0, 0.0};
  for (int i = 0; i < 3; ++i) {
    auto& l = s.links[static_cast<std::size_t>(i)];
    const double m = i == 0 ? 1.0 : 1e-4;
    l.length = 1.0;
    l.mass = m;
    l.com = {0.5, 0.0};
    l.inertia = m / 3.0;  // rod about its end
    l.contact_profile = {{0.1, -0.01}, {0.5, -0.01}, {0.9, -0.01}};
  }
  scen::ScenarioConfig cfg = scen::default_config(scen::Scenario::reach);
  cfg.horizon = 480;
  cfg.robot.control_horizon = 480;
  cfg.joint_damping = 0.0;
  const double amp = 0.05;
  cfg.q_init = {-1.5707963267948966 + amp, 0.0, 0.0};
  scen::ScenarioInstance inst = scen::sample_task(cfg, 1);

  const sim::RolloutResult rr = sim::rollout(s, sim::ControlSeq::zeros(cfg.horizon), inst);
  REQUIRE_FALSE(rr.diverged);

  // period from successive upward crossings of the release angle offset
  std::vector<double> crossings;
  for (std::size_t t = 1; t < rr.trajectory.size(); ++t) {
    const double prev = rr.trajectory[t - 1].q[0] + 1.5707963267948966;
    const double cur = rr.trajectory[t].q[0] + 1.5707963267948966;
    if (prev < 0.0 && cur >= 0.0) {
      const double frac = -prev / (cur - prev);
      crossings.push_back((static_cast<double>(t - 1) + frac) * cfg.dt);
    }
  }
  REQUIRE(crossings.size() >= 2);
  const double period = crossings[1] - crossings[0];
  // physical pendulum: T = 2 pi sqrt(I / (m g d))
  const double analytic = 2.0 * M_PI * std::sqrt((1.0 / 3.0) / (1.0 * cfg.gravity * 0.5));
  REQUIRE(std::fabs(period - analytic) / analytic < 0.02);
}

TEST_CASE("energy drift below 1% of the exchanged energy over 2 seconds") {
  scen::ScenarioConfig cfg = scen::default_config(scen::Scenario::reach);
  cfg.horizon = 240;  // 2 s at 1/120
  cfg.robot.control_horizon = 240;
  cfg.joint_damping = 0.0;
  cfg.q_init = {-0.9, 0.4, 0.3};
  const scen::ScenarioInstance inst = scen::sample_task(cfg, 3);
  const morpho::SimParams s = params_for(cfg, morpho::MorphParams::ones());
  const sim::RolloutResult rr = sim::rollout(s, sim::ControlSeq::zeros(cfg.horizon), inst);
  REQUIRE_FALSE(rr.diverged);

  std::vector<double> energy;
  double peak_ke = 0.0;
  for (const auto& st : rr.trajectory) {
    energy.push_back(sim::mechanical_energy(s, st, cfg.gravity));
    sim::SimState still = st;
    still.qdot = {0, 0, 0};
    peak_ke = std::max(peak_ke, energy.back() - sim::mechanical_energy(s, still, cfg.gravity));
  }
  const int n = static_cast<int>(energy.size());
  const int w = n / 20;
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < w; ++i) {
    head += energy[static_cast<std::size_t>(i)];
    tail += energy[static_cast<std::size_t>(n - 1 - i)];
  }
  const double drift = std::fabs(tail - head) / w;
  REQUIRE(peak_ke > 0.0);
  REQUIRE(drift / peak_ke < 0.01);
}

namespace {

// instances whose rollout certainly makes contact, so the FD comparison
// exercises the contact branch of the adjoint
scen::ScenarioInstance engineered_contact_instance(scen::Scenario tag, int horizon) {
  scen::ScenarioConfig cfg = scen::default_config(tag);
  cfg.horizon = horizon;
  cfg.robot.control_horizon = horizon;
  scen::TaskFeatures t;
  t.tag = tag;
  if (tag == scen::Scenario::flipbox) {
    t.values.resize(4);
    t.values << 5.0, 0.0, 6.0, 7.0;
  } else {
    t.values.resize(2);
    t.values << 4.0, 7.0;
  }
  return scen::make_instance(cfg, t);
}

}  // namespace

TEST_CASE("adjoint gradients match finite differences") {
  // Gradient-check horizons are kept short enough that central differences
  // stay first-order accurate: long contact-rich rollouts amplify an h
  // perturbation beyond the linear regime.
  struct Case {
    scen::Scenario tag;
    double tol;
    int horizon;
  };
  const Case cases[] = {{scen::Scenario::reach, 1e-5, 120},
                        {scen::Scenario::flipbox, 1e-3, 60},
                        {scen::Scenario::rotateplank, 1e-3, 60}};
  Rng rng(2024);
  for (const Case& cs : cases) {
    for (int trial = 0; trial < 4; ++trial) {
      const bool engineered = trial == 3 && cs.tag != scen::Scenario::reach;
      const scen::ScenarioInstance inst =
          engineered ? engineered_contact_instance(cs.tag, cs.horizon)
                     : instance_for(cs.tag, 100 + static_cast<std::uint64_t>(trial),
                                    [&](scen::ScenarioConfig& c) {
                                      c.horizon = cs.horizon;
                                      c.robot.control_horizon = cs.horizon;
                                    });
      const morpho::MorphModel morph(inst.cfg.robot);
      const morpho::MorphParams p = random_morph(rng);
      const morpho::SimParams s = morph.derive(p);
      sim::ControlSeq c = sim::ControlSeq::random(inst.cfg.horizon, 2.0, rng);

      const sim::RolloutResult rr = sim::rollout(s, c, inst);
      REQUIRE_FALSE(rr.diverged);
      if (engineered) {
        // the object must actually have been touched
        const auto& obj = rr.trajectory.back().object;
        const double moved = cs.tag == scen::Scenario::flipbox
                                 ? std::fabs(obj[2]) + std::fabs(obj[0] - inst.box_center0.x)
                                 : std::fabs(obj[0]);
        REQUIRE(moved > 1e-4);
      }

      const double h = 1e-5;
      std::vector<double> flat;
      morpho::flatten_sim_params(s, flat);
      const int np = static_cast<int>(s.links[0].contact_profile.size());

      // all simulation-parameter coordinates
      Eigen::VectorXd fd_s(static_cast<int>(flat.size()));
      for (std::size_t i = 0; i < flat.size(); ++i) {
        std::vector<double> fp = flat, fm = flat;
        fp[i] += h;
        fm[i] -= h;
        const double lp = sim::loss_only(morpho::unflatten_sim_params(fp, np), c, inst);
        const double lm = sim::loss_only(morpho::unflatten_sim_params(fm, np), c, inst);
        fd_s[static_cast<int>(i)] = (lp - lm) / (2 * h);
      }
      REQUIRE(rel_err(rr.grad_S, fd_s) < cs.tol);

      // design-vector gradient through the morphology chain
      const Eigen::VectorXd grad_p = morph.jacobian(p).transpose() * rr.grad_S;
      Eigen::VectorXd fd_p(morpho::kDesignDim);
      for (int i = 0; i < morpho::kDesignDim; ++i) {
        morpho::MorphParams pp = p, pm = p;
        pp.values[i] += h;
        pm.values[i] -= h;
        fd_p[i] = (sim::loss_only(morph.derive(pp), c, inst) -
                   sim::loss_only(morph.derive(pm), c, inst)) /
                  (2 * h);
      }
      REQUIRE(rel_err(grad_p, fd_p) < cs.tol);

      // a sample of control coordinates
      Eigen::VectorXd fd_c(12), an_c(12);
      for (int k = 0; k < 12; ++k) {
        const int t = rng.uniform_int(inst.cfg.horizon);
        const int j = rng.uniform_int(3);
        sim::ControlSeq cp = c, cm = c;
        cp.torques(t, j) += h;
        cm.torques(t, j) -= h;
        fd_c[k] = (sim::loss_only(s, cp, inst) - sim::loss_only(s, cm, inst)) / (2 * h);
        an_c[k] = rr.grad_C(t, j);
      }
      REQUIRE(rel_err(an_c, fd_c) < cs.tol);
    }
  }
}

TEST_CASE("loss_only equals rollout loss exactly on 100 random inputs") {
  Rng rng(55);
  const scen::Scenario tags[] = {scen::Scenario::reach, scen::Scenario::flipbox,
                                 scen::Scenario::rotateplank};
  for (int trial = 0; trial < 100; ++trial) {
    const scen::Scenario tag = tags[trial % 3];
    const scen::ScenarioInstance inst =
        instance_for(tag, 500 + static_cast<std::uint64_t>(trial), [](scen::ScenarioConfig& c) {
          c.horizon = 60;
          c.robot.control_horizon = 60;
        });
    const morpho::SimParams s = params_for(inst.cfg, random_morph(rng, 0.5, 2.2));
    const sim::ControlSeq c = sim::ControlSeq::random(inst.cfg.horizon, 5.0, rng);
    const sim::RolloutResult rr = sim::rollout(s, c, inst);
    const double lo = sim::loss_only(s, c, inst);
    REQUIRE(lo == rr.loss);  // bitwise
  }
}

TEST_CASE("identical inputs give bitwise-identical trajectories") {
  Rng rng(77);
  const scen::ScenarioInstance inst = instance_for(scen::Scenario::flipbox, 9);
  const morpho::SimParams s = params_for(inst.cfg, random_morph(rng));
  const sim::ControlSeq c = sim::ControlSeq::random(inst.cfg.horizon, 3.0, rng);
  const sim::RolloutResult a = sim::rollout(s, c, inst);
  const sim::RolloutResult b = sim::rollout(s, c, inst);
  REQUIRE(a.loss == b.loss);
  REQUIRE(a.trajectory.size() == b.trajectory.size());
  for (std::size_t t = 0; t < a.trajectory.size(); ++t) {
    for (int k = 0; k < 3; ++k) {
      REQUIRE(a.trajectory[t].q[static_cast<std::size_t>(k)] ==
              b.trajectory[t].q[static_cast<std::size_t>(k)]);
      REQUIRE(a.trajectory[t].qdot[static_cast<std::size_t>(k)] ==
              b.trajectory[t].qdot[static_cast<std::size_t>(k)]);
    }
    REQUIRE(a.trajectory[t].object == b.trajectory[t].object);
  }
  REQUIRE((a.grad_S - b.grad_S).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("penalty force vanishes smoothly at zero penetration") {
  const sim::ContactParams cp{1e4, 10.0, 0.8, 0.01};
  const Vec2<double> n{0.0, 1.0};
  const Vec2<double> vrel{0.3, -0.5};
  const auto f0 = sim::penalty_force(0.0, n, vrel, cp);
  REQUIRE(f0.x == 0.0);
  REQUIRE(f0.y == 0.0);
  // the depth derivative also vanishes at d = 0 (quadratic onset)
  const double h = 1e-7;
  const auto fh = sim::penalty_force(h, n, vrel, cp);
  REQUIRE(std::fabs(fh.y) / h < 1e-2);
  // and the slope is continuous across small depths
  double prev = 0.0;
  for (double d : {1e-6, 1e-5, 1e-4}) {
    const auto fa = sim::penalty_force(d, n, vrel, cp);
    const auto fb = sim::penalty_force(d * 1.001, n, vrel, cp);
    const double slope = (fb.y - fa.y) / (d * 0.001);
    REQUIRE(slope >= prev);  // slope grows linearly from zero
    prev = slope;
  }
}

TEST_CASE("divergent dynamics return the capped loss with zero gradients") {
  morpho::SimParams s;
  s.base = {0.0, 0.0};
  for (int i = 0; i < 3; ++i) {
    auto& l = s.links[static_cast<std::size_t>(i)];
    l.length = 1.0;
    l.mass = 1e-9;
    l.com = {0.5, 0.0};
    l.inertia = 1e-12;  // absurd inertia: torque 30 gives ~3e13 rad/s^2
    l.contact_profile = {{0.1, -0.01}, {0.5, -0.01}, {0.9, -0.01}};
  }
  scen::ScenarioConfig cfg = scen::default_config(scen::Scenario::reach);
  cfg.horizon = 60;
  cfg.robot.control_horizon = 60;
  const scen::ScenarioInstance inst = scen::sample_task(cfg, 5);
  sim::ControlSeq c = sim::ControlSeq::zeros(cfg.horizon);
  c.torques.setConstant(30.0);
  const sim::RolloutResult rr = sim::rollout(s, c, inst);
  REQUIRE(rr.diverged);
  REQUIRE(rr.loss == sim::kDivergedLossCap);
  REQUIRE(rr.grad_S.cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(rr.grad_C.cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(sim::loss_only(s, c, inst) == sim::kDivergedLossCap);
}

TEST_CASE("zero torque on a far box leaves only the state-error term") {
  const scen::ScenarioInstance inst =
      instance_for(scen::Scenario::flipbox, 42, [](scen::ScenarioConfig& c) {
        c.horizon = 120;
        c.robot.control_horizon = 120;
      });
  const morpho::SimParams s = params_for(inst.cfg, morpho::MorphParams::ones());
  const sim::ControlSeq c = sim::ControlSeq::zeros(inst.cfg.horizon);
  const sim::RolloutResult rr = sim::rollout(s, c, inst);
  REQUIRE_FALSE(rr.diverged);
  const double th_final = rr.trajectory.back().object[2];
  const double expect = (th_final - sim::kHalfPi) * (th_final - sim::kHalfPi);
  REQUIRE(rr.loss == expect);  // no effort contribution at zero torque
}

TEST_CASE("evaluate_loss reproduces the fused rollout loss") {
  Rng rng(31);
  for (const auto tag :
       {scen::Scenario::reach, scen::Scenario::flipbox, scen::Scenario::rotateplank}) {
    const scen::ScenarioInstance inst = instance_for(tag, 7, [](scen::ScenarioConfig& c) {
      c.horizon = 80;
      c.robot.control_horizon = 80;
    });
    const morpho::SimParams s = params_for(inst.cfg, random_morph(rng));
    const sim::ControlSeq c = sim::ControlSeq::random(inst.cfg.horizon, 2.0, rng);
    const sim::RolloutResult rr = sim::rollout(s, c, inst);
    REQUIRE_FALSE(rr.diverged);
    REQUIRE(sim::evaluate_loss(rr.trajectory, c, s, inst) == rr.loss);
  }
}

TEST_CASE("loss partials over a stored trajectory match finite differences") {
  Rng rng(13);
  const scen::ScenarioInstance inst =
      instance_for(scen::Scenario::flipbox, 11, [](scen::ScenarioConfig& c) {
        c.horizon = 48;
        c.robot.control_horizon = 48;
      });
  const morpho::SimParams s = params_for(inst.cfg, morpho::MorphParams::ones());
  const sim::ControlSeq c = sim::ControlSeq::random(inst.cfg.horizon, 2.0, rng);
  sim::RolloutResult rr = sim::rollout(s, c, inst);
  REQUIRE_FALSE(rr.diverged);

  const sim::LossPartials lp = sim::evaluate_loss_partials(rr.trajectory, c, s, inst);
  REQUIRE(lp.loss == rr.loss);

  const double h = 1e-6;
  for (int probe = 0; probe < 24; ++probe) {
    const int t = rng.uniform_int(inst.cfg.horizon);
    const int what = rng.uniform_int(3);
    auto traj_p = rr.trajectory;
    auto traj_m = rr.trajectory;
    double analytic = 0.0;
    if (what == 0) {
      const int k = rng.uniform_int(3);
      traj_p[static_cast<std::size_t>(t)].q[static_cast<std::size_t>(k)] += h;
      traj_m[static_cast<std::size_t>(t)].q[static_cast<std::size_t>(k)] -= h;
      analytic = lp.d_q(t, k);
    } else if (what == 1) {
      const int k = rng.uniform_int(6);
      traj_p[static_cast<std::size_t>(t)].object[static_cast<std::size_t>(k)] += h;
      traj_m[static_cast<std::size_t>(t)].object[static_cast<std::size_t>(k)] -= h;
      analytic = lp.d_object(t, k);
    } else {
      const int k = rng.uniform_int(3);
      sim::ControlSeq cp = c, cm = c;
      cp.torques(t, k) += h;
      cm.torques(t, k) -= h;
      const double fd = (sim::evaluate_loss(rr.trajectory, cp, s, inst) -
                         sim::evaluate_loss(rr.trajectory, cm, s, inst)) /
                        (2 * h);
      REQUIRE(std::fabs(fd - lp.d_torque(t, k)) < 1e-6 * std::max(1.0, std::fabs(fd)));
      continue;
    }
    const double fd =
        (sim::evaluate_loss(traj_p, c, s, inst) - sim::evaluate_loss(traj_m, c, s, inst)) / (2 * h);
    REQUIRE(std::fabs(fd - analytic) < 1e-6 * std::max(1.0, std::fabs(fd)));
  }
}
