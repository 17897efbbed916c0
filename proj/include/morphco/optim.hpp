#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

// Box-constrained limited-memory quasi-Newton optimization.
//
// One lbfgsb_step performs: active-set identification along the projected
// steepest-descent path (generalized Cauchy point), minimization of the
// limited-memory quadratic model over the free variables, and a backtracking
// line search with the Armijo sufficient-decrease condition. The inverse
// Hessian information lives in the usual compact representation
// B = theta*I - W M W^T built from at most m curvature pairs.
//
// Gradients are supplied by the caller, so a curvature pair (s, y) can only
// be completed when the *next* call provides the gradient at the accepted
// point; LbfgsbMemory::observe does exactly that.

namespace morphco::optim {

struct BoxBounds {
  Eigen::VectorXd lower, upper;

  BoxBounds() = default;
  BoxBounds(Eigen::VectorXd lo, Eigen::VectorXd hi) : lower(std::move(lo)), upper(std::move(hi)) {
    if (lower.size() != upper.size()) throw std::invalid_argument("bounds dimension mismatch");
    for (int i = 0; i < lower.size(); ++i)
      if (!(lower[i] <= upper[i])) throw std::invalid_argument("lower > upper at " + std::to_string(i));
  }
  static BoxBounds uniform(int n, double lo, double hi) {
    return BoxBounds(Eigen::VectorXd::Constant(n, lo), Eigen::VectorXd::Constant(n, hi));
  }
  int size() const { return static_cast<int>(lower.size()); }

  Eigen::VectorXd clamp(const Eigen::VectorXd& x) const {
    return x.cwiseMax(lower).cwiseMin(upper);
  }
};

struct OptStepReport {
  Eigen::VectorXd new_point;
  double f_value = 0.0;
  double grad_norm = 0.0;  // projected gradient inf-norm at the input point
  int n_evals = 0;
  bool converged = false;
  bool line_search_failed = false;
  double step_size = 0.0;
};

// Components pushing against an active bound are zeroed; what remains is the
// first-order stationarity measure for the box.
inline Eigen::VectorXd projected_gradient(const Eigen::VectorXd& x, const Eigen::VectorXd& g,
                                          const BoxBounds& b) {
  Eigen::VectorXd pg = g;
  for (int i = 0; i < x.size(); ++i) {
    if (x[i] <= b.lower[i] && g[i] > 0.0) pg[i] = 0.0;
    if (x[i] >= b.upper[i] && g[i] < 0.0) pg[i] = 0.0;
  }
  return pg;
}

inline bool check_convergence(const Eigen::VectorXd& pg_a, const Eigen::VectorXd& pg_b,
                              double tol = 1e-5) {
  const double na = pg_a.size() ? pg_a.cwiseAbs().maxCoeff() : 0.0;
  const double nb = pg_b.size() ? pg_b.cwiseAbs().maxCoeff() : 0.0;
  return std::max(na, nb) < tol;
}

inline bool check_convergence(const Eigen::VectorXd& x_a, const Eigen::VectorXd& g_a,
                              const BoxBounds& b_a, const Eigen::VectorXd& x_b,
                              const Eigen::VectorXd& g_b, const BoxBounds& b_b,
                              double tol = 1e-5) {
  return check_convergence(projected_gradient(x_a, g_a, b_a), projected_gradient(x_b, g_b, b_b),
                           tol);
}

inline Eigen::VectorXd sgd_step(const Eigen::VectorXd& params, const Eigen::VectorXd& grad,
                                double lr) {
  if (params.size() != grad.size()) throw std::invalid_argument("sgd_step dimension mismatch");
  if (!(lr > 0.0)) throw std::invalid_argument("sgd_step: lr must be positive");
  return params - lr * grad;
}

class LbfgsbMemory {
 public:
  explicit LbfgsbMemory(int m = 10) : m_(m) {}

  int pair_count() const { return static_cast<int>(s_.size()); }
  double theta() const { return theta_; }

  void reset() {
    s_.clear();
    y_.clear();
    theta_ = 1.0;
    has_prev_ = false;
    dirty_ = true;
  }

  // Complete the pending curvature pair with the gradient at the point the
  // previous step accepted. Pairs failing the curvature guard are dropped.
  void observe(const Eigen::VectorXd& x, const Eigen::VectorXd& g) {
    if (has_prev_) {
      Eigen::VectorXd s = x - x_prev_;
      Eigen::VectorXd y = g - g_prev_;
      const double sy = s.dot(y);
      if (sy > 1e-10) {
        s_.push_back(std::move(s));
        y_.push_back(std::move(y));
        if (static_cast<int>(s_.size()) > m_) {
          s_.pop_front();
          y_.pop_front();
        }
        theta_ = y_.back().dot(y_.back()) / sy;
        dirty_ = true;
      }
      has_prev_ = false;
    }
  }

  void anchor(const Eigen::VectorXd& x, const Eigen::VectorXd& g) {
    x_prev_ = x;
    g_prev_ = g;
    has_prev_ = true;
  }

  // Rebuild W (n x 2k) and the middle matrix M of B = theta I - W M W^T.
  void refresh(int n) const {
    if (!dirty_) return;
    const int k = pair_count();
    w_.resize(n, 2 * k);
    for (int j = 0; j < k; ++j) {
      w_.col(j) = y_[static_cast<std::size_t>(j)];
      w_.col(k + j) = theta_ * s_[static_cast<std::size_t>(j)];
    }
    if (k > 0) {
      Eigen::MatrixXd sy(k, k), ss(k, k);
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
          sy(i, j) = s_[static_cast<std::size_t>(i)].dot(y_[static_cast<std::size_t>(j)]);
          ss(i, j) = s_[static_cast<std::size_t>(i)].dot(s_[static_cast<std::size_t>(j)]);
        }
      Eigen::MatrixXd minv(2 * k, 2 * k);
      minv.topLeftCorner(k, k) = Eigen::VectorXd(-sy.diagonal()).asDiagonal();
      Eigen::MatrixXd l = sy.triangularView<Eigen::StrictlyLower>();
      minv.topRightCorner(k, k) = l.transpose();
      minv.bottomLeftCorner(k, k) = l;
      minv.bottomRightCorner(k, k) = theta_ * ss;
      minv_ = minv;
      m_mat_ = minv.inverse();
    } else {
      w_.resize(n, 0);
      minv_.resize(0, 0);
      m_mat_.resize(0, 0);
    }
    dirty_ = false;
  }

  const Eigen::MatrixXd& w() const { return w_; }
  const Eigen::MatrixXd& m_mat() const { return m_mat_; }
  const Eigen::MatrixXd& minv_mat() const { return minv_; }

 private:
  int m_;
  std::deque<Eigen::VectorXd> s_, y_;
  double theta_ = 1.0;
  Eigen::VectorXd x_prev_, g_prev_;
  bool has_prev_ = false;

  mutable bool dirty_ = true;
  mutable Eigen::MatrixXd w_, m_mat_, minv_;
};

namespace detail {

struct CauchyResult {
  Eigen::VectorXd x_cp;
  Eigen::VectorXd c;  // W^T (x_cp - x)
  std::vector<int> free_set;
};

inline CauchyResult cauchy_point(const Eigen::VectorXd& x, const Eigen::VectorXd& g,
                                 const BoxBounds& b, const LbfgsbMemory& mem) {
  const int n = static_cast<int>(x.size());
  const double inf = std::numeric_limits<double>::infinity();
  const Eigen::MatrixXd& w = mem.w();
  const Eigen::MatrixXd& m = mem.m_mat();
  const double theta = mem.theta();
  const int k2 = static_cast<int>(w.cols());

  Eigen::VectorXd d = -g;
  Eigen::VectorXd t(n);
  for (int i = 0; i < n; ++i) {
    if (g[i] < 0.0)
      t[i] = (x[i] - b.upper[i]) / g[i];
    else if (g[i] > 0.0)
      t[i] = (x[i] - b.lower[i]) / g[i];
    else
      t[i] = inf;
    if (t[i] <= 0.0) {
      t[i] = 0.0;
      d[i] = 0.0;
    }
  }

  std::vector<int> order;
  order.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    if (t[i] > 0.0 && t[i] < inf) order.push_back(i);
  std::sort(order.begin(), order.end(), [&](int a, int c) { return t[a] < t[c]; });

  Eigen::VectorXd p = k2 ? Eigen::VectorXd(w.transpose() * d) : Eigen::VectorXd(0);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(k2);
  double fp = -d.dot(d);
  double fpp = -theta * fp - (k2 ? p.dot(m * p) : 0.0);
  CauchyResult res;
  res.x_cp = x;
  std::vector<bool> at_bound(static_cast<std::size_t>(n), false);
  for (int i = 0; i < n; ++i)
    if (t[i] == 0.0) at_bound[static_cast<std::size_t>(i)] = true;

  double t_old = 0.0;
  std::size_t pos = 0;
  double dt_min = fpp > 1e-30 ? -fp / fpp : (fp < 0.0 ? inf : 0.0);

  while (pos < order.size()) {
    const int bidx = order[pos];
    const double tb = t[bidx];
    const double dt = tb - t_old;
    if (dt_min < dt) break;

    // variable bidx reaches its bound; fix it and update the model slope
    const double zb = (d[bidx] > 0.0 ? b.upper[bidx] : b.lower[bidx]) - x[bidx];
    const double gb = g[bidx];
    res.x_cp[bidx] = d[bidx] > 0.0 ? b.upper[bidx] : b.lower[bidx];
    at_bound[static_cast<std::size_t>(bidx)] = true;
    if (k2) c += dt * p;
    if (k2) {
      const Eigen::VectorXd wb = w.row(bidx).transpose();
      const Eigen::VectorXd mwb = m * wb;
      fp += dt * fpp + gb * gb + theta * gb * zb - gb * mwb.dot(c);
      fpp += -theta * gb * gb - 2.0 * gb * mwb.dot(p) - gb * gb * wb.dot(mwb);
      p += gb * wb;
    } else {
      fp += dt * fpp + gb * gb + theta * gb * zb;
      fpp += -theta * gb * gb;
    }
    d[bidx] = 0.0;
    t_old = tb;
    dt_min = fpp > 1e-30 ? -fp / fpp : (fp < 0.0 ? inf : 0.0);
    ++pos;
  }

  dt_min = std::max(dt_min, 0.0);
  if (!std::isfinite(dt_min)) dt_min = 0.0;
  const double t_cp = t_old + dt_min;
  for (int i = 0; i < n; ++i)
    if (!at_bound[static_cast<std::size_t>(i)]) res.x_cp[i] = x[i] + t_cp * d[i];
  if (k2) c += dt_min * p;
  res.c = std::move(c);

  res.free_set.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    if (!at_bound[static_cast<std::size_t>(i)]) res.free_set.push_back(i);
  return res;
}

// Minimize the quadratic model over the free variables of the Cauchy point,
// then clip the result into the box.
inline Eigen::VectorXd subspace_minimize(const Eigen::VectorXd& x, const Eigen::VectorXd& g,
                                         const BoxBounds& b, const LbfgsbMemory& mem,
                                         const CauchyResult& cp) {
  const int nf = static_cast<int>(cp.free_set.size());
  Eigen::VectorXd xbar = cp.x_cp;
  if (nf == 0) return xbar;
  const Eigen::MatrixXd& w = mem.w();
  const double theta = mem.theta();
  const int k2 = static_cast<int>(w.cols());

  Eigen::VectorXd r(nf);
  Eigen::MatrixXd wf(nf, k2);
  for (int a = 0; a < nf; ++a) {
    const int i = cp.free_set[static_cast<std::size_t>(a)];
    double ri = g[i] + theta * (cp.x_cp[i] - x[i]);
    if (k2) {
      wf.row(a) = w.row(i);
      ri -= w.row(i).dot(mem.m_mat() * cp.c);
    }
    r[a] = ri;
  }

  Eigen::VectorXd df;
  if (k2 == 0) {
    df = -r / theta;
  } else {
    // Woodbury on B_FF = theta I - W_F M W_F^T, using M^{-1} directly:
    // B_FF^{-1} = I/theta - (1/theta^2) W_F (W_F^T W_F / theta - M^{-1})^{-1} W_F^T
    Eigen::MatrixXd inner = wf.transpose() * wf / theta - mem.minv_mat();
    Eigen::VectorXd wtr = wf.transpose() * r;
    Eigen::VectorXd sol = inner.partialPivLu().solve(wtr);
    df = -(r / theta - wf * sol / (theta * theta));
  }

  // longest feasible fraction of the subspace step
  double alpha = 1.0;
  for (int a = 0; a < nf; ++a) {
    const int i = cp.free_set[static_cast<std::size_t>(a)];
    const double xi = cp.x_cp[i];
    if (df[a] > 0.0)
      alpha = std::min(alpha, (b.upper[i] - xi) / df[a]);
    else if (df[a] < 0.0)
      alpha = std::min(alpha, (b.lower[i] - xi) / df[a]);
  }
  alpha = std::max(alpha, 0.0);
  for (int a = 0; a < nf; ++a) {
    const int i = cp.free_set[static_cast<std::size_t>(a)];
    xbar[i] = cp.x_cp[i] + alpha * df[a];
    xbar[i] = std::min(std::max(xbar[i], b.lower[i]), b.upper[i]);
  }
  return xbar;
}

}  // namespace detail

inline constexpr double kArmijoC1 = 1e-4;
inline constexpr int kMaxBacktracks = 20;

// One outer iteration. `objective` is used only for line-search trial
// evaluations; `f` and `g` must belong to `x`.
inline OptStepReport lbfgsb_step(const Eigen::VectorXd& x, double f, const Eigen::VectorXd& g,
                                 const BoxBounds& bounds, LbfgsbMemory& memory,
                                 const std::function<double(const Eigen::VectorXd&)>& objective,
                                 double pg_tol = 1e-5) {
  if (x.size() != bounds.size() || g.size() != x.size())
    throw std::invalid_argument("lbfgsb_step dimension mismatch");

  OptStepReport rep;
  memory.observe(x, g);

  const Eigen::VectorXd pg = projected_gradient(x, g, bounds);
  rep.grad_norm = pg.size() ? pg.cwiseAbs().maxCoeff() : 0.0;
  if (rep.grad_norm < pg_tol) {
    rep.new_point = x;
    rep.f_value = f;
    rep.converged = true;
    return rep;
  }

  memory.refresh(static_cast<int>(x.size()));
  const detail::CauchyResult cp = detail::cauchy_point(x, g, bounds, memory);
  Eigen::VectorXd xbar = detail::subspace_minimize(x, g, bounds, memory, cp);

  Eigen::VectorXd d = xbar - x;
  double dd = g.dot(d);
  if (!(dd < 0.0)) {
    // model produced a non-descent direction; fall back to the projected
    // gradient step
    d = bounds.clamp(x - pg) - x;
    dd = g.dot(d);
    if (!(dd < 0.0)) {
      rep.new_point = x;
      rep.f_value = f;
      rep.line_search_failed = true;
      memory.reset();
      return rep;
    }
  }

  double alpha = 1.0;
  for (int bt = 0; bt < kMaxBacktracks; ++bt) {
    Eigen::VectorXd xt = x + alpha * d;
    if (alpha == 1.0) xt = xbar;  // keep bound values exact on the full step
    const double ft = objective(xt);
    ++rep.n_evals;
    if (std::isfinite(ft) && ft <= f + kArmijoC1 * alpha * dd) {
      rep.new_point = std::move(xt);
      rep.f_value = ft;
      rep.step_size = alpha;
      memory.anchor(x, g);
      return rep;
    }
    alpha *= 0.5;
  }

  rep.new_point = x;
  rep.f_value = f;
  rep.line_search_failed = true;
  memory.reset();
  return rep;
}

// Driver used by tests and the self-contained benchmark problems: the
// callable returns f and fills the gradient.
struct MinimizeResult {
  Eigen::VectorXd x;
  double f = 0.0;
  int iterations = 0;
  bool converged = false;
};

inline MinimizeResult minimize(
    const std::function<double(const Eigen::VectorXd&, Eigen::VectorXd*)>& fg,
    const Eigen::VectorXd& x0, const BoxBounds& bounds, int max_iters, double pg_tol = 1e-10,
    int memory_size = 10) {
  MinimizeResult out;
  out.x = bounds.clamp(x0);
  LbfgsbMemory mem(memory_size);
  Eigen::VectorXd g(x0.size());
  out.f = fg(out.x, &g);
  for (int it = 0; it < max_iters; ++it) {
    OptStepReport rep = lbfgsb_step(
        out.x, out.f, g, bounds, mem, [&](const Eigen::VectorXd& xt) { return fg(xt, nullptr); },
        pg_tol);
    out.iterations = it + 1;
    if (rep.converged) {
      out.converged = true;
      break;
    }
    if (rep.line_search_failed) break;
    out.x = rep.new_point;
    out.f = fg(out.x, &g);
  }
  return out;
}

}  // namespace morphco::optim
