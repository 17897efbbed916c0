#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "morphco/ad.hpp"
#include "morphco/geom.hpp"
#include "morphco/morpho.hpp"
#include "morphco/rng.hpp"
#include "morphco/scenarios.hpp"

// Differentiable planar rigid-body simulator for the 3-link torque-driven
// arm. Reduced coordinates (three joint angles), semi-implicit Euler at a
// fixed step, smooth penalty contact against the scenario object, and the
// task loss accumulated inside the stepping loop.
//
// The whole integrator is one scalar-generic template. Instantiated with
// double it is the fast loss-only path; instantiated with ad::Var it records
// the computation on a tape, and one reverse sweep yields the exact
// gradients of the discrete dynamics with respect to every simulation
// parameter and every torque. Both instantiations execute the same
// floating-point operations in the same order, so their losses agree
// bitwise.

namespace morphco::sim {

inline constexpr double kDivergedLossCap = 1e6;
inline constexpr double kStateLimit = 1e6;
inline constexpr double kHalfPi = 1.5707963267948966;

struct ControlSeq {
  Eigen::MatrixXd torques;  // horizon x 3

  static ControlSeq zeros(int horizon) { return {Eigen::MatrixXd::Zero(horizon, 3)}; }
  static ControlSeq random(int horizon, double amplitude, Rng& rng) {
    ControlSeq c{Eigen::MatrixXd(horizon, 3)};
    for (int t = 0; t < horizon; ++t)
      for (int j = 0; j < 3; ++j) c.torques(t, j) = rng.uniform(-amplitude, amplitude);
    return c;
  }
};

struct SimState {
  std::array<double, 3> q{};
  std::array<double, 3> qdot{};
  std::vector<double> object;  // flipbox: x y th vx vy om; rotateplank: th om
};

struct RolloutResult {
  double loss = 0.0;
  Eigen::VectorXd grad_S;   // flat simulation-parameter layout
  Eigen::MatrixXd grad_C;   // horizon x 3
  std::vector<SimState> trajectory;
  bool diverged = false;
};

template <class T>
struct ArmFrames {
  std::array<Vec2<T>, 4> joint;  // joint[0] = base, joint[3] = fingertip
  std::array<T, 3> cphi, sphi;
  std::array<Vec2<T>, 3> com_w;
};

template <class T>
ArmFrames<T> arm_frames(const morpho::SimParamsT<T>& S, const std::array<T, 3>& q) {
  using std::cos;
  using std::sin;
  ArmFrames<T> f;
  f.joint[0] = S.base;
  T phi = T(0);
  for (int i = 0; i < 3; ++i) {
    phi = phi + q[static_cast<std::size_t>(i)];
    const T c = cos(phi), s = sin(phi);
    f.cphi[static_cast<std::size_t>(i)] = c;
    f.sphi[static_cast<std::size_t>(i)] = s;
    f.com_w[static_cast<std::size_t>(i)] =
        f.joint[static_cast<std::size_t>(i)] + rotate(c, s, S.links[static_cast<std::size_t>(i)].com);
    f.joint[static_cast<std::size_t>(i) + 1] =
        f.joint[static_cast<std::size_t>(i)] +
        rotate(c, s, Vec2<T>(S.links[static_cast<std::size_t>(i)].length, T(0)));
  }
  return f;
}

template <class T>
Vec2<T> tip_position(const morpho::SimParamsT<T>& S, const std::array<T, 3>& q) {
  using std::cos;
  using std::sin;
  Vec2<T> p = S.base;
  T phi = T(0);
  for (int i = 0; i < 3; ++i) {
    phi = phi + q[static_cast<std::size_t>(i)];
    p += rotate(cos(phi), sin(phi), Vec2<T>(S.links[static_cast<std::size_t>(i)].length, T(0)));
  }
  return p;
}

// Starting pose. Scenarios with an object place the fingertip on a hover
// point: the aim landmark raised by the wrist link's own profile depth plus
// a small clearance, so no morphology spawns in contact. The pose is a
// three-link crane solved in closed form — shoulder and both elbows lean to
// the side away from the object — and adapts smoothly to the actual link
// lengths. Unreachable hover points degrade to pointing at them at nearly
// full extension.
template <class T>
std::array<T, 3> initial_pose(const morpho::SimParamsT<T>& S, const scen::ScenarioInstance& inst) {
  if (!inst.has_aim)
    return {T(inst.cfg.q_init[0]), T(inst.cfg.q_init[1]), T(inst.cfg.q_init[2])};
  using std::acos;
  using std::atan2;
  using std::cos;
  using std::sin;
  auto clamp_unit = [](T x) {
    if (val(x) > 1.0) return T(1.0);
    if (val(x) < -1.0) return T(-1.0);
    return x;
  };
  const T l1 = S.links[0].length;
  const T l2 = S.links[1].length;
  const T l3 = S.links[2].length;
  T hang = T(0);
  for (const Vec2<T>& p : S.links[2].contact_profile)
    if (val(-p.y) > val(hang)) hang = -p.y;
  const Vec2<T> target =
      Vec2<T>(T(inst.aim_point.x), T(inst.aim_point.y) + hang + T(0.35 + inst.aim_margin));
  const double side = inst.aim_point.x >= val(S.base.x) ? 1.0 : -1.0;

  const Vec2<T> rel = target - S.base;
  const T dist = norm(rel);
  const T psi = atan2(rel.y, rel.x);
  const T r2 = T(0.9) * (l2 + l3);
  const T phi1 =
      psi + T(side) * acos(clamp_unit((l1 * l1 + dist * dist - r2 * r2) / (T(2) * l1 * dist)));
  const Vec2<T> j2{S.base.x + l1 * cos(phi1), S.base.y + l1 * sin(phi1)};

  Vec2<T> v = target - j2;
  T dv = norm(v);
  const T dvmax = T(0.97) * (l2 + l3);
  if (val(dv) > val(dvmax)) {
    v = v * (dvmax / dv);
    dv = dvmax;
  }
  const T beta = acos(clamp_unit((l2 * l2 + dv * dv - l3 * l3) / (T(2) * l2 * dv)));
  const T phi2 = atan2(v.y, v.x) + T(side) * beta;
  const Vec2<T> j3{j2.x + l2 * cos(phi2), j2.y + l2 * sin(phi2)};
  const T phi3 = atan2(j2.y + v.y - j3.y, j2.x + v.x - j3.x);
  return {phi1, phi2 - phi1, phi3 - phi2};
}

// Joint velocities that move the fingertip toward the aim landmark at a
// fixed gentle speed (least-squares through the tip Jacobian), so the
// approach does not depend on how the particular starting fold happens to
// balance under gravity. Zero when the scenario has no aim.
template <class T>
std::array<T, 3> initial_velocity(const morpho::SimParamsT<T>& S,
                                  const scen::ScenarioInstance& inst,
                                  const std::array<T, 3>& q) {
  if (!inst.has_aim) return {T(0), T(0), T(0)};
  using std::cos;
  using std::sin;
  using std::sqrt;
  // joint positions and tip
  Vec2<T> joints[4];
  joints[0] = S.base;
  T phi = T(0);
  for (int i = 0; i < 3; ++i) {
    phi = phi + q[static_cast<std::size_t>(i)];
    joints[i + 1] = joints[i] + rotate(cos(phi), sin(phi),
                                       Vec2<T>(S.links[static_cast<std::size_t>(i)].length, T(0)));
  }
  const Vec2<T> tip = joints[3];
  Vec2<T> dir = Vec2<T>(T(inst.aim_point.x), T(inst.aim_point.y)) - tip;
  const T dn = norm(dir);
  if (val(dn) < 1e-9) return {T(0), T(0), T(0)};
  const Vec2<T> vdes = dir * (T(2.5) / dn);

  // least-norm qdot with J qdot = vdes, J columns perp(tip - joint_k)
  Vec2<T> jc[3];
  for (int k = 0; k < 3; ++k) jc[k] = perp(tip - joints[k]);
  T a00 = T(1e-9), a01 = T(0), a11 = T(1e-9);
  for (int k = 0; k < 3; ++k) {
    a00 += jc[k].x * jc[k].x;
    a01 += jc[k].x * jc[k].y;
    a11 += jc[k].y * jc[k].y;
  }
  const T det = a00 * a11 - a01 * a01;
  const T lx = (a11 * vdes.x - a01 * vdes.y) / det;
  const T ly = (a00 * vdes.y - a01 * vdes.x) / det;
  std::array<T, 3> qd;
  for (int k = 0; k < 3; ++k) qd[static_cast<std::size_t>(k)] = jc[k].x * lx + jc[k].y * ly;
  return qd;
}

struct ContactParams {
  double kn, cd, mu, vreg;
  double vsat = 0.25;  // approach-speed saturation of the damping factor
  double dcap = 0.12;  // smooth saturation depth of the penalty spring
};

// Force on the penetrating point. n is the unit normal pushing the point out
// of the other body; vrel is point velocity minus other-body velocity at the
// contact. Normal force kn*sat(d)^2*(1 + cd*sat(approach_speed)), truncated
// at zero: quadratic in penetration with a velocity-proportional loading
// factor, so both the force and its depth derivative vanish at d = 0 and the
// stepped dynamics stay C^1 at contact onset. Both saturations are tanh
// shaped, which bounds the impulse a fast collision can deliver in one step
// without introducing kinks.
template <class T>
Vec2<T> penalty_force(const T& d, const Vec2<T>& n, const Vec2<T>& vrel, const ContactParams& cp) {
  using std::tanh;
  const T vn = dot(vrel, n);
  const Vec2<T> tdir = perp(n);
  const T vt = dot(vrel, tdir);
  const T deff = T(cp.dcap) * tanh(d / T(cp.dcap));
  const T load = T(1) + T(cp.cd * cp.vsat) * tanh(-vn / T(cp.vsat));
  const T load_pos = val(load) > 0.0 ? load : T(0);
  const T fn = T(cp.kn) * deff * deff * load_pos;
  const T ft = -T(cp.mu) * fn * tanh(vt / T(cp.vreg));
  return n * fn + tdir * ft;
}

// Shared by the fused rollout loss and the standalone trajectory loss so the
// two stay bitwise identical.
template <class T>
void add_step_loss(const scen::ScenarioInstance& inst, int t, const morpho::SimParamsT<T>& S,
                   const std::array<T, 3>& q_after, const T* u, T& loss) {
  const T effort = u[0] * u[0] + u[1] * u[1] + u[2] * u[2];
  loss += T(inst.cfg.effort_weight) * effort;
  if (inst.cfg.tag == scen::Scenario::reach) {
    const auto cps = inst.reach_checkpoints();
    for (int k = 0; k < 4; ++k) {
      if (cps[static_cast<std::size_t>(k)] == t) {
        const Vec2<T> tip = tip_position(S, q_after);
        const Vec2<T> dvec = tip - Vec2<T>(T(inst.targets[static_cast<std::size_t>(k)].x),
                                           T(inst.targets[static_cast<std::size_t>(k)].y));
        loss += T(inst.cfg.state_weight) * dot(dvec, dvec);
      }
    }
  }
}

template <class T>
void add_final_loss(const scen::ScenarioInstance& inst, const T& object_angle, T& loss) {
  if (inst.cfg.tag == scen::Scenario::reach) return;
  const T err = object_angle - T(kHalfPi);
  loss += T(inst.cfg.state_weight) * err * err;
}

namespace detail {

template <class T>
bool finite_small(const T& x) {
  const double v = val(x);
  return std::isfinite(v) && std::fabs(v) < kStateLimit;
}

}  // namespace detail

// Core integrator. Returns the accumulated loss; on divergence the returned
// loss is meaningless and *diverged is set. tau_flat is row-major
// horizon x 3.
template <class T>
T simulate(const morpho::SimParamsT<T>& S, const std::vector<T>& tau_flat,
           const scen::ScenarioInstance& inst, std::vector<SimState>* traj_out, bool* diverged) {
  using std::cos;
  using std::sin;
  const scen::ScenarioConfig& cfg = inst.cfg;
  const int H = cfg.horizon;
  const T dt = T(cfg.dt);
  const Vec2<T> gvec(T(0), T(-cfg.gravity));
  const ContactParams cpar{cfg.contact_stiffness, cfg.contact_damping, cfg.friction_mu,
                           cfg.friction_vreg,     cfg.contact_vsat,    cfg.contact_depth_cap};
  const bool has_box = cfg.tag == scen::Scenario::flipbox;
  const bool has_plank = cfg.tag == scen::Scenario::rotateplank;

  std::array<T, 3> q = initial_pose(S, inst);
  std::array<T, 3> qd = initial_velocity(S, inst, q);
  Vec2<T> bpos(T(inst.box_center0.x), T(inst.box_center0.y));
  Vec2<T> bvel(T(0), T(0));
  T bth = T(0), bom = T(0);
  T pth = T(0), pom = T(0);

  std::array<T, 3> inertia_com;  // link inertia about its own center of mass
  for (int i = 0; i < 3; ++i) {
    const auto& l = S.links[static_cast<std::size_t>(i)];
    inertia_com[static_cast<std::size_t>(i)] = l.inertia - l.mass * dot(l.com, l.com);
  }

  if (traj_out) {
    traj_out->clear();
    traj_out->reserve(static_cast<std::size_t>(H));
  }

  T loss = T(0);
  *diverged = false;

  for (int t = 0; t < H; ++t) {
    const T* u = &tau_flat[static_cast<std::size_t>(3 * t)];
    const ArmFrames<T> fr = arm_frames(S, q);

    std::array<T, 3> om;
    {
      T acc = T(0);
      for (int i = 0; i < 3; ++i) {
        acc = acc + qd[static_cast<std::size_t>(i)];
        om[static_cast<std::size_t>(i)] = acc;
      }
    }

    std::array<T, 3> rhs{u[0] - T(cfg.joint_damping) * qd[0],
                         u[1] - T(cfg.joint_damping) * qd[1],
                         u[2] - T(cfg.joint_damping) * qd[2]};

    // centripetal acceleration of each COM at zero joint acceleration
    std::array<Vec2<T>, 3> abias;
    {
      Vec2<T> acc(T(0), T(0));
      for (int i = 0; i < 3; ++i) {
        const Vec2<T> comoff = fr.com_w[static_cast<std::size_t>(i)] - fr.joint[static_cast<std::size_t>(i)];
        const T w2 = om[static_cast<std::size_t>(i)] * om[static_cast<std::size_t>(i)];
        abias[static_cast<std::size_t>(i)] = acc - w2 * comoff;
        const Vec2<T> seg =
            fr.joint[static_cast<std::size_t>(i) + 1] - fr.joint[static_cast<std::size_t>(i)];
        acc = acc - w2 * seg;
      }
    }

    for (int k = 0; k < 3; ++k) {
      for (int i = k; i < 3; ++i) {
        const Vec2<T> jik =
            perp(fr.com_w[static_cast<std::size_t>(i)] - fr.joint[static_cast<std::size_t>(k)]);
        const T m = S.links[static_cast<std::size_t>(i)].mass;
        rhs[static_cast<std::size_t>(k)] += m * dot(gvec, jik);
        rhs[static_cast<std::size_t>(k)] -= m * dot(jik, abias[static_cast<std::size_t>(i)]);
      }
    }

    T M00, M01, M02, M11, M12, M22;
    {
      auto entry = [&](int k, int l) {
        T acc = T(0);
        for (int i = (k > l ? k : l); i < 3; ++i) {
          const Vec2<T> rk =
              fr.com_w[static_cast<std::size_t>(i)] - fr.joint[static_cast<std::size_t>(k)];
          const Vec2<T> rl =
              fr.com_w[static_cast<std::size_t>(i)] - fr.joint[static_cast<std::size_t>(l)];
          acc += S.links[static_cast<std::size_t>(i)].mass * dot(rk, rl) +
                 inertia_com[static_cast<std::size_t>(i)];
        }
        return acc;
      };
      M00 = entry(0, 0);
      M01 = entry(0, 1);
      M02 = entry(0, 2);
      M11 = entry(1, 1);
      M12 = entry(1, 2);
      M22 = entry(2, 2);
    }

    // contact forces
    Vec2<T> boxF(T(0), T(0));
    T boxT = T(0);
    T plankT = T(0);
    if (has_box || has_plank) {
      const Vec2<T> oc = has_box ? bpos : Vec2<T>(T(inst.stake.x), T(inst.stake.y));
      const T oth = has_box ? bth : pth;
      const T c = cos(oth), s = sin(oth);
      const double hx = has_box ? inst.box_hx : inst.plank_hx;
      const double hy = has_box ? inst.box_hy : inst.plank_hy;
      for (int i = 0; i < 3; ++i) {
        for (const Vec2<T>& pl : S.links[static_cast<std::size_t>(i)].contact_profile) {
          const Vec2<T> w =
              fr.joint[static_cast<std::size_t>(i)] +
              rotate(fr.cphi[static_cast<std::size_t>(i)], fr.sphi[static_cast<std::size_t>(i)], pl);
          const Vec2<T> rel = w - oc;
          const Vec2<T> ubf = rotate(c, -s, rel);  // into the object frame
          const double ux = val(ubf.x), uy = val(ubf.y);
          if (ux <= -hx || ux >= hx || uy <= -hy || uy >= hy) continue;
          const T dr = T(hx) - ubf.x;
          const T dl = ubf.x + T(hx);
          const T dtp = T(hy) - ubf.y;
          const T db = ubf.y + T(hy);
          // nearest face gives the push-out direction
          T d = dr;
          Vec2<T> nb(T(1), T(0));
          if (val(dl) < val(d)) {
            d = dl;
            nb = Vec2<T>(T(-1), T(0));
          }
          if (val(dtp) < val(d)) {
            d = dtp;
            nb = Vec2<T>(T(0), T(1));
          }
          if (val(db) < val(d)) {
            d = db;
            nb = Vec2<T>(T(0), T(-1));
          }
          const Vec2<T> n = rotate(c, s, nb);
          Vec2<T> vw(T(0), T(0));
          for (int k = 0; k <= i; ++k)
            vw += qd[static_cast<std::size_t>(k)] *
                  perp(w - fr.joint[static_cast<std::size_t>(k)]);
          const Vec2<T> vo = has_box ? bvel + bom * perp(rel) : pom * perp(rel);
          const Vec2<T> f = penalty_force(d, n, vw - vo, cpar);
          for (int k = 0; k <= i; ++k)
            rhs[static_cast<std::size_t>(k)] +=
                dot(perp(w - fr.joint[static_cast<std::size_t>(k)]), f);
          if (has_box) {
            boxF -= f;
            boxT -= cross(rel, f);
          } else {
            plankT -= cross(rel, f);
          }
        }
      }
    }
    if (has_box) {
      const T c = cos(bth), s = sin(bth);
      for (int sx = -1; sx <= 1; sx += 2) {
        for (int sy = -1; sy <= 1; sy += 2) {
          const Vec2<T> rel =
              rotate(c, s, Vec2<T>(T(sx * inst.box_hx), T(sy * inst.box_hy)));
          const Vec2<T> cw = bpos + rel;
          if (val(cw.y) >= 0.0) continue;
          const T d = -cw.y;
          const Vec2<T> vcw = bvel + bom * perp(rel);
          const Vec2<T> f = penalty_force(d, Vec2<T>(T(0), T(1)), vcw, cpar);
          boxF += f;
          boxT += cross(rel, f);
        }
      }
    }

    // 3x3 symmetric solve by adjugate
    std::array<T, 3> qdd;
    {
      const T c00 = M11 * M22 - M12 * M12;
      const T c01 = M02 * M12 - M01 * M22;
      const T c02 = M01 * M12 - M02 * M11;
      const T det = M00 * c00 + M01 * c01 + M02 * c02;
      const T inv = T(1) / det;
      const T c11 = M00 * M22 - M02 * M02;
      const T c12 = M01 * M02 - M00 * M12;
      const T c22 = M00 * M11 - M01 * M01;
      qdd[0] = (c00 * rhs[0] + c01 * rhs[1] + c02 * rhs[2]) * inv;
      qdd[1] = (c01 * rhs[0] + c11 * rhs[1] + c12 * rhs[2]) * inv;
      qdd[2] = (c02 * rhs[0] + c12 * rhs[1] + c22 * rhs[2]) * inv;
    }

    for (int k = 0; k < 3; ++k) {
      qd[static_cast<std::size_t>(k)] += dt * qdd[static_cast<std::size_t>(k)];
      q[static_cast<std::size_t>(k)] += dt * qd[static_cast<std::size_t>(k)];
    }
    if (has_box) {
      const Vec2<T> acc = boxF * (T(1) / T(inst.box_mass)) + gvec;
      const T alpha = boxT / T(inst.box_inertia);
      bvel += dt * acc;
      bom += dt * alpha;
      bpos += dt * bvel;
      bth += dt * bom;
    }
    if (has_plank) {
      const T alpha = (plankT - T(cfg.plank_pivot_damping) * pom) / T(inst.plank_inertia);
      pom += dt * alpha;
      pth += dt * pom;
    }

    add_step_loss(inst, t, S, q, u, loss);

    bool ok = true;
    for (int k = 0; k < 3; ++k)
      ok = ok && detail::finite_small(q[static_cast<std::size_t>(k)]) &&
           detail::finite_small(qd[static_cast<std::size_t>(k)]);
    if (has_box)
      ok = ok && detail::finite_small(bpos.x) && detail::finite_small(bpos.y) &&
           detail::finite_small(bth) && detail::finite_small(bvel.x) &&
           detail::finite_small(bvel.y) && detail::finite_small(bom);
    if (has_plank) ok = ok && detail::finite_small(pth) && detail::finite_small(pom);
    if (!ok) {
      *diverged = true;
      break;
    }

    if (traj_out) {
      SimState st;
      for (int k = 0; k < 3; ++k) {
        st.q[static_cast<std::size_t>(k)] = val(q[static_cast<std::size_t>(k)]);
        st.qdot[static_cast<std::size_t>(k)] = val(qd[static_cast<std::size_t>(k)]);
      }
      if (has_box)
        st.object = {val(bpos.x), val(bpos.y), val(bth), val(bvel.x), val(bvel.y), val(bom)};
      else if (has_plank)
        st.object = {val(pth), val(pom)};
      traj_out->push_back(std::move(st));
    }
  }

  if (!*diverged) {
    if (has_box) add_final_loss(inst, bth, loss);
    if (has_plank) add_final_loss(inst, pth, loss);
  }
  return loss;
}

namespace detail {

inline void validate_inputs(const morpho::SimParams& S, const ControlSeq& c,
                            const scen::ScenarioInstance& inst) {
  if (static_cast<int>(c.torques.rows()) != inst.cfg.horizon || c.torques.cols() != 3)
    throw std::invalid_argument("control sequence shape mismatch");
  const double lim = inst.cfg.tau_max * (1.0 + 1e-12) + 1e-12;
  if (c.torques.cwiseAbs().maxCoeff() > lim)
    throw std::invalid_argument("control sequence exceeds torque bounds");
  for (const auto& l : S.links)
    if (!(l.mass > 0.0) || !(l.length > 0.0) || !(l.inertia > 0.0))
      throw std::invalid_argument("degenerate simulation parameters");
}

inline std::vector<double> control_flat(const ControlSeq& c) {
  std::vector<double> out(static_cast<std::size_t>(c.torques.rows() * 3));
  for (int t = 0; t < c.torques.rows(); ++t)
    for (int j = 0; j < 3; ++j) out[static_cast<std::size_t>(3 * t + j)] = c.torques(t, j);
  return out;
}

}  // namespace detail

inline double loss_only(const morpho::SimParams& S, const ControlSeq& c,
                        const scen::ScenarioInstance& inst) {
  detail::validate_inputs(S, c, inst);
  const std::vector<double> tau = detail::control_flat(c);
  bool diverged = false;
  const double loss = simulate<double>(S, tau, inst, nullptr, &diverged);
  return diverged ? kDivergedLossCap : loss;
}

inline RolloutResult rollout(const morpho::SimParams& S, const ControlSeq& c,
                             const scen::ScenarioInstance& inst) {
  detail::validate_inputs(S, c, inst);
  using ad::Var;
  thread_local ad::Tape tape;
  thread_local std::vector<double> adj;
  tape.clear();
  ad::TapeScope scope(tape);

  // lift simulation parameters in the canonical flat order
  std::vector<double> s_flat;
  morpho::flatten_sim_params(S, s_flat);
  std::vector<std::int32_t> s_idx(s_flat.size());
  std::vector<Var> s_vars(s_flat.size());
  for (std::size_t i = 0; i < s_flat.size(); ++i) {
    s_vars[i] = Var::input(s_flat[i]);
    s_idx[i] = s_vars[i].i;
  }
  const morpho::SimParamsT<Var> Sv = morpho::unflatten_sim_params(
      s_vars, static_cast<int>(S.links[0].contact_profile.size()));

  const int H = inst.cfg.horizon;
  std::vector<Var> tau(static_cast<std::size_t>(3 * H));
  std::vector<std::int32_t> c_idx(tau.size());
  for (int t = 0; t < H; ++t)
    for (int j = 0; j < 3; ++j) {
      const std::size_t k = static_cast<std::size_t>(3 * t + j);
      tau[k] = Var::input(c.torques(t, j));
      c_idx[k] = tau[k].i;
    }

  RolloutResult rr;
  bool diverged = false;
  const Var loss = simulate<Var>(Sv, tau, inst, &rr.trajectory, &diverged);
  rr.diverged = diverged;
  rr.grad_S = Eigen::VectorXd::Zero(static_cast<int>(s_flat.size()));
  rr.grad_C = Eigen::MatrixXd::Zero(H, 3);
  if (diverged) {
    rr.loss = kDivergedLossCap;
    return rr;
  }
  rr.loss = val(loss);
  tape.reverse(loss.i, adj);
  for (std::size_t i = 0; i < s_idx.size(); ++i)
    rr.grad_S[static_cast<int>(i)] = adj[static_cast<std::size_t>(s_idx[i])];
  for (int t = 0; t < H; ++t)
    for (int j = 0; j < 3; ++j)
      rr.grad_C(t, j) = adj[static_cast<std::size_t>(c_idx[static_cast<std::size_t>(3 * t + j)])];
  return rr;
}

// Loss of a stored trajectory; identical accumulation (and therefore
// identical value) to the fused in-rollout loss.
inline double evaluate_loss(const std::vector<SimState>& traj, const ControlSeq& c,
                            const morpho::SimParams& S, const scen::ScenarioInstance& inst) {
  if (static_cast<int>(traj.size()) != inst.cfg.horizon)
    throw std::invalid_argument("trajectory length must equal the horizon");
  double loss = 0.0;
  for (int t = 0; t < inst.cfg.horizon; ++t) {
    const SimState& st = traj[static_cast<std::size_t>(t)];
    std::array<double, 3> u{c.torques(t, 0), c.torques(t, 1), c.torques(t, 2)};
    add_step_loss<double>(inst, t, S, st.q, u.data(), loss);
  }
  if (inst.cfg.tag == scen::Scenario::flipbox) add_final_loss(inst, traj.back().object[2], loss);
  if (inst.cfg.tag == scen::Scenario::rotateplank)
    add_final_loss(inst, traj.back().object[0], loss);
  return loss;
}

struct LossPartials {
  double loss = 0.0;
  Eigen::MatrixXd d_q;       // horizon x 3
  Eigen::MatrixXd d_object;  // horizon x object_dim
  Eigen::MatrixXd d_torque;  // horizon x 3
};

inline LossPartials evaluate_loss_partials(const std::vector<SimState>& traj, const ControlSeq& c,
                                           const morpho::SimParams& S,
                                           const scen::ScenarioInstance& inst) {
  if (static_cast<int>(traj.size()) != inst.cfg.horizon)
    throw std::invalid_argument("trajectory length must equal the horizon");
  using ad::Var;
  thread_local ad::Tape tape;
  thread_local std::vector<double> adj;
  tape.clear();
  ad::TapeScope scope(tape);

  const int H = inst.cfg.horizon;
  const int od = inst.object_dim();
  morpho::SimParamsT<Var> Sv;
  for (int i = 0; i < 3; ++i) {
    const auto& l = S.links[static_cast<std::size_t>(i)];
    auto& lv = Sv.links[static_cast<std::size_t>(i)];
    lv.length = Var(l.length);
    lv.mass = Var(l.mass);
    lv.inertia = Var(l.inertia);
    lv.com = {Var(l.com.x), Var(l.com.y)};
    lv.contact_profile.assign(l.contact_profile.size(), Vec2<Var>{});
    for (std::size_t k = 0; k < l.contact_profile.size(); ++k)
      lv.contact_profile[k] = {Var(l.contact_profile[k].x), Var(l.contact_profile[k].y)};
  }
  Sv.base = {Var(S.base.x), Var(S.base.y)};

  std::vector<std::array<Var, 3>> qv(static_cast<std::size_t>(H));
  std::vector<std::vector<Var>> ov(static_cast<std::size_t>(H));
  std::vector<std::array<Var, 3>> uv(static_cast<std::size_t>(H));
  for (int t = 0; t < H; ++t) {
    const SimState& st = traj[static_cast<std::size_t>(t)];
    for (int k = 0; k < 3; ++k) {
      qv[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)] =
          Var::input(st.q[static_cast<std::size_t>(k)]);
      uv[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)] = Var::input(c.torques(t, k));
    }
    ov[static_cast<std::size_t>(t)].resize(static_cast<std::size_t>(od));
    for (int k = 0; k < od; ++k)
      ov[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)] =
          Var::input(st.object[static_cast<std::size_t>(k)]);
  }

  Var loss(0.0);
  for (int t = 0; t < H; ++t)
    add_step_loss(inst, t, Sv, qv[static_cast<std::size_t>(t)],
                  uv[static_cast<std::size_t>(t)].data(), loss);
  if (inst.cfg.tag == scen::Scenario::flipbox)
    add_final_loss(inst, ov[static_cast<std::size_t>(H - 1)][2], loss);
  if (inst.cfg.tag == scen::Scenario::rotateplank)
    add_final_loss(inst, ov[static_cast<std::size_t>(H - 1)][0], loss);

  LossPartials out;
  out.loss = val(loss);
  out.d_q = Eigen::MatrixXd::Zero(H, 3);
  out.d_object = Eigen::MatrixXd::Zero(H, od);
  out.d_torque = Eigen::MatrixXd::Zero(H, 3);
  tape.reverse(loss.i, adj);
  auto read = [&](const Var& v) { return v.i >= 0 ? adj[static_cast<std::size_t>(v.i)] : 0.0; };
  for (int t = 0; t < H; ++t) {
    for (int k = 0; k < 3; ++k) {
      out.d_q(t, k) = read(qv[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)]);
      out.d_torque(t, k) = read(uv[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)]);
    }
    for (int k = 0; k < od; ++k)
      out.d_object(t, k) = read(ov[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)]);
  }
  return out;
}

// Kinetic plus gravitational potential energy of the arm alone.
inline double mechanical_energy(const morpho::SimParams& S, const SimState& st, double gravity) {
  const ArmFrames<double> fr = arm_frames(S, st.q);
  double om = 0.0, e = 0.0;
  std::array<double, 3> omc{};
  for (int i = 0; i < 3; ++i) {
    om += st.qdot[static_cast<std::size_t>(i)];
    omc[static_cast<std::size_t>(i)] = om;
  }
  for (int i = 0; i < 3; ++i) {
    Vec2<double> v{0, 0};
    for (int k = 0; k <= i; ++k)
      v += st.qdot[static_cast<std::size_t>(k)] *
           perp(fr.com_w[static_cast<std::size_t>(i)] - fr.joint[static_cast<std::size_t>(k)]);
    const auto& l = S.links[static_cast<std::size_t>(i)];
    const double ic = l.inertia - l.mass * dot(l.com, l.com);
    e += 0.5 * l.mass * dot(v, v) + 0.5 * ic * omc[static_cast<std::size_t>(i)] * omc[static_cast<std::size_t>(i)];
    e += l.mass * gravity * fr.com_w[static_cast<std::size_t>(i)].y;
  }
  return e;
}

}  // namespace morphco::sim
