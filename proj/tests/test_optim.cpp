#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "morphco/optim.hpp"
#include "morphco/rng.hpp"

using namespace morphco;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

double sphere(const VectorXd& x, VectorXd* g) {
  if (g) *g = 2.0 * x;
  return x.squaredNorm();
}

double rosenbrock2(const VectorXd& x, VectorXd* g) {
  const double a = x[0], b = x[1];
  if (g) {
    g->resize(2);
    (*g)[0] = -2.0 * (1 - a) - 400.0 * a * (b - a * a);
    (*g)[1] = 200.0 * (b - a * a);
  }
  return (1 - a) * (1 - a) + 100.0 * (b - a * a) * (b - a * a);
}

optim::BoxBounds wide(int n) { return optim::BoxBounds::uniform(n, -1e10, 1e10); }

}  // namespace

TEST_CASE("sphere from (3,4) converges below 1e-8 within 5 iterations") {
  VectorXd x0(2);
  x0 << 3, 4;
  const auto res = optim::minimize(sphere, x0, wide(2), 5, 1e-12);
  REQUIRE(res.x.norm() < 1e-8);
}

TEST_CASE("active upper bound: (x-2)^2 on [-1,1] lands exactly on 1") {
  auto fg = [](const VectorXd& x, VectorXd* g) {
    if (g) {
      g->resize(1);
      (*g)[0] = 2 * (x[0] - 2);
    }
    return (x[0] - 2) * (x[0] - 2);
  };
  VectorXd x0(1);
  x0 << 0.0;
  const auto res = optim::minimize(fg, x0, optim::BoxBounds::uniform(1, -1, 1), 50, 1e-10);
  REQUIRE(res.x[0] == 1.0);  // projection assigns the bound exactly
  REQUIRE(res.converged);
}

TEST_CASE("rosenbrock reaches f < 1e-8 within 100 iterations") {
  VectorXd x0(2);
  x0 << -1.2, 1.0;
  const auto res = optim::minimize(rosenbrock2, x0, optim::BoxBounds::uniform(2, -5, 5), 100, 0.0);
  REQUIRE(res.f < 1e-8);
  REQUIRE(res.iterations <= 100);
}

TEST_CASE("bound-constrained quadratic reaches its KKT point exactly") {
  // minimum of ||x - c||^2 with c outside the box in every coordinate: the
  // KKT point is the projection of c onto the box, reached exactly
  VectorXd c(4);
  c << 5.0, -7.0, 3.5, -2.5;
  auto fg = [&](const VectorXd& x, VectorXd* g) {
    if (g) *g = 2.0 * (x - c);
    return (x - c).squaredNorm();
  };
  const optim::BoxBounds b = optim::BoxBounds::uniform(4, -1, 1);
  VectorXd x0 = VectorXd::Zero(4);
  const auto res = optim::minimize(fg, x0, b, 50, 1e-10);
  REQUIRE(res.converged);
  REQUIRE(res.x[0] == 1.0);
  REQUIRE(res.x[1] == -1.0);
  REQUIRE(res.x[2] == 1.0);
  REQUIRE(res.x[3] == -1.0);
}

TEST_CASE("unconstrained convex quadratic (n <= m) converges in n + 2 iterations") {
  const int n = 5;
  MatrixXd a = MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) a(i, i) = 1.0 + 0.5 * i / (n - 1);
  // Householder rotation so the quadratic is not axis-aligned
  const VectorXd v = VectorXd::LinSpaced(n, 1.0, 2.0).normalized();
  const MatrixXd r = MatrixXd::Identity(n, n) - 2.0 * v * v.transpose();
  const MatrixXd q = r.transpose() * a * r;
  auto fg = [&](const VectorXd& x, VectorXd* g) {
    if (g) *g = q * x;
    return 0.5 * x.dot(q * x);
  };
  VectorXd x0(n);
  x0 << 2, -1, 3, 0.5, -2;
  const auto res = optim::minimize(fg, x0, wide(n), n + 2, 0.0);
  REQUIRE(res.f < 1e-10);
}

TEST_CASE("iterates stay within bounds on random problems") {
  Rng rng(100);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 3 + rng.uniform_int(5);
    VectorXd lo(n), hi(n), c(n);
    for (int i = 0; i < n; ++i) {
      lo[i] = rng.uniform(-2, 0);
      hi[i] = lo[i] + rng.uniform(0.5, 3.0);
      c[i] = rng.uniform(-4, 4);
    }
    const optim::BoxBounds b(lo, hi);
    MatrixXd q = MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) q(i, i) = rng.uniform(0.5, 5.0);
    auto fg = [&](const VectorXd& x, VectorXd* g) {
      if (g) *g = q * (x - c);
      return 0.5 * (x - c).dot(q * (x - c));
    };
    VectorXd x = b.clamp(VectorXd::Zero(n));
    optim::LbfgsbMemory mem(10);
    VectorXd g(n);
    double f = fg(x, &g);
    for (int it = 0; it < 25; ++it) {
      const auto rep = optim::lbfgsb_step(
          x, f, g, b, mem, [&](const VectorXd& xt) { return fg(xt, nullptr); }, 0.0);
      for (int i = 0; i < n; ++i) {
        REQUIRE(rep.new_point[i] >= lo[i]);
        REQUIRE(rep.new_point[i] <= hi[i]);
      }
      if (rep.line_search_failed || rep.converged) break;
      // accepted steps satisfy the sufficient-decrease condition
      const VectorXd d = rep.new_point - x;
      REQUIRE(rep.f_value <= f + optim::kArmijoC1 * g.dot(d) + 1e-15);
      x = rep.new_point;
      f = fg(x, &g);
    }
  }
}

TEST_CASE("cauchy point equals the closed-form minimizer when unconstrained") {
  // with no memory pairs B = I, so the Cauchy step is t* = g.g / g.B.g = 1
  Rng rng(4);
  const int n = 6;
  VectorXd x(n), g(n);
  for (int i = 0; i < n; ++i) {
    x[i] = rng.uniform(-1, 1);
    g[i] = rng.uniform(-1, 1);
  }
  optim::LbfgsbMemory mem(10);
  mem.refresh(n);
  const auto cp = optim::detail::cauchy_point(x, g, wide(n), mem);
  for (int i = 0; i < n; ++i) REQUIRE(cp.x_cp[i] == Catch::Approx(x[i] - g[i]).margin(1e-12));
  REQUIRE(cp.free_set.size() == static_cast<std::size_t>(n));
}

TEST_CASE("cauchy point respects bounds and decreases the model") {
  Rng rng(9);
  const int n = 8;
  for (int trial = 0; trial < 20; ++trial) {
    VectorXd x(n), g(n), lo(n), hi(n);
    for (int i = 0; i < n; ++i) {
      lo[i] = rng.uniform(-1.5, -0.1);
      hi[i] = rng.uniform(0.1, 1.5);
      x[i] = rng.uniform(lo[i], hi[i]);
      g[i] = rng.uniform(-2, 2);
    }
    const optim::BoxBounds b(lo, hi);
    // seed a couple of curvature pairs so W and M are non-trivial
    optim::LbfgsbMemory mem(10);
    VectorXd xa = x, ga = g;
    for (int k = 0; k < 3; ++k) {
      VectorXd step(n);
      for (int i = 0; i < n; ++i) step[i] = rng.uniform(-0.1, 0.1);
      VectorXd xb = xa + step;
      VectorXd gb = ga + (xb - xa) * (1.0 + k);  // positive curvature
      mem.anchor(xa, ga);
      mem.observe(xb, gb);
      xa = xb;
      ga = gb;
    }
    mem.refresh(n);
    const auto cp = optim::detail::cauchy_point(x, g, b, mem);
    for (int i = 0; i < n; ++i) {
      REQUIRE(cp.x_cp[i] >= lo[i] - 1e-12);
      REQUIRE(cp.x_cp[i] <= hi[i] + 1e-12);
    }
    // model value m(x_cp) <= m(x) = 0, with B assembled densely
    const Eigen::MatrixXd w = mem.w();
    Eigen::MatrixXd bmat = mem.theta() * Eigen::MatrixXd::Identity(n, n);
    if (w.cols() > 0) bmat -= w * mem.m_mat() * w.transpose();
    const VectorXd dx = cp.x_cp - x;
    const double m_cp = g.dot(dx) + 0.5 * dx.dot(bmat * dx);
    REQUIRE(m_cp <= 1e-12);
    // consistency of the reduced vector c = W^T (x_cp - x)
    if (w.cols() > 0) {
      const VectorXd cvec = w.transpose() * dx;
      for (int i = 0; i < cvec.size(); ++i)
        REQUIRE(cp.c[i] == Catch::Approx(cvec[i]).margin(1e-9));
    }
  }
}

TEST_CASE("sgd step follows the definition") {
  VectorXd p(2), g(2);
  p << 1, 1;
  g << 1, -1;
  const VectorXd out = optim::sgd_step(p, g, 0.1);
  REQUIRE(out[0] == Catch::Approx(0.9));
  REQUIRE(out[1] == Catch::Approx(1.1));

  const VectorXd same = optim::sgd_step(p, VectorXd::Zero(2), 0.5);
  REQUIRE(same == p);

  // repeated steps on ||w||^2 contract by 0.8 per step
  VectorXd w(1);
  w << 2.0;
  for (int i = 0; i < 10; ++i) {
    const VectorXd prev = w;
    w = optim::sgd_step(w, 2.0 * w, 0.1);
    REQUIRE(w[0] == Catch::Approx(0.8 * prev[0]).epsilon(1e-12));
  }
}

TEST_CASE("convergence check uses projected gradients") {
  const optim::BoxBounds b = optim::BoxBounds::uniform(2, -1, 1);
  VectorXd x(2), g(2);

  // both gradients zero
  x << 0, 0;
  g << 0, 0;
  REQUIRE(optim::check_convergence(x, g, b, x, g, b, 1e-5));

  // gradient pushing outward at an active bound projects to zero
  x << 1, 0;
  g << -3, 0;  // negative gradient at upper bound pushes outward
  VectorXd pg = optim::projected_gradient(x, g, b);
  REQUIRE(pg[0] == 0.0);
  REQUIRE(optim::check_convergence(pg, VectorXd::Zero(2), 1e-5));

  // a free component above tolerance fails
  x << 0, 0;
  g << 1e-3, 0;
  REQUIRE_FALSE(optim::check_convergence(x, g, b, x, VectorXd::Zero(2), b, 1e-5));
}

TEST_CASE("line search failure returns the current point and resets memory") {
  // objective callback that always reports an increase
  auto bad = [](const VectorXd&) { return 1e300; };
  VectorXd x(2), g(2);
  x << 0.5, 0.5;
  g << 1, 1;
  optim::LbfgsbMemory mem(10);
  const auto rep = optim::lbfgsb_step(x, 1.0, g, wide(2), mem, bad, 0.0);
  REQUIRE(rep.line_search_failed);
  REQUIRE_FALSE(rep.converged);
  REQUIRE(rep.new_point == x);
  REQUIRE(rep.n_evals == optim::kMaxBacktracks);
  REQUIRE(mem.pair_count() == 0);
}
