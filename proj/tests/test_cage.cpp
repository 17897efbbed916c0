#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>
#include <vector>

#include "morphco/cage.hpp"
#include "morphco/rng.hpp"

using namespace morphco;

namespace {

// Independent oracle: Floater's mean value formula evaluated through the
// angle form tan(alpha/2) with alpha from atan2, normalized directly.
std::vector<double> mvc_oracle(const std::vector<Vec2d>& handles, const Vec2d& p) {
  const int n = static_cast<int>(handles.size());
  std::vector<double> ang(n), r(n);
  for (int i = 0; i < n; ++i) {
    const Vec2d e = handles[i] - p;
    r[i] = norm(e);
  }
  std::vector<double> tanh2(n);
  for (int i = 0; i < n; ++i) {
    const Vec2d a = handles[i] - p;
    const Vec2d b = handles[(i + 1) % n] - p;
    const double alpha = std::atan2(cross(a, b), dot(a, b));
    tanh2[i] = std::tan(alpha / 2.0);
  }
  std::vector<double> w(n);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    w[i] = (tanh2[(i + n - 1) % n] + tanh2[i]) / r[i];
    sum += w[i];
  }
  for (double& x : w) x /= sum;
  return w;
}

std::vector<Vec2d> unit_square() {
  return {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
}

std::vector<Vec2d> random_convex_hexagon(Rng& rng) {
  // jittered angles around a circle stay convex
  std::vector<Vec2d> v;
  double base = rng.uniform(0.0, 0.5);
  for (int k = 0; k < 6; ++k) {
    const double ang = base + 2.0 * M_PI * k / 6.0 + rng.uniform(-0.25, 0.25);
    const double rad = rng.uniform(1.0, 3.0);
    v.push_back({rad * std::cos(ang), rad * std::sin(ang)});
  }
  return v;
}

Vec2d random_interior_point(const std::vector<Vec2d>& poly, Rng& rng) {
  // rejection sample inside the bounding box
  double xlo = poly[0].x, xhi = poly[0].x, ylo = poly[0].y, yhi = poly[0].y;
  for (const auto& p : poly) {
    xlo = std::min(xlo, p.x);
    xhi = std::max(xhi, p.x);
    ylo = std::min(ylo, p.y);
    yhi = std::max(yhi, p.y);
  }
  for (;;) {
    const Vec2d p{rng.uniform(xlo, xhi), rng.uniform(ylo, yhi)};
    if (point_strictly_inside(poly, p, 1e-6 * (xhi - xlo))) return p;
  }
}

}  // namespace

TEST_CASE("centroid of the unit square has equal weights") {
  cage::Cage c(unit_square());
  cage::Mesh m({{0.5, 0.5}});
  const auto w = cage::compute_weights(c, m);
  for (int j = 0; j < 4; ++j) REQUIRE(w.matrix()(0, j) == Catch::Approx(0.25).margin(1e-12));
}

TEST_CASE("weight rows sum to one") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const auto poly = random_convex_hexagon(rng);
    cage::Cage c(poly);
    std::vector<Vec2d> pts;
    for (int k = 0; k < 8; ++k) pts.push_back(random_interior_point(poly, rng));
    const auto w = cage::compute_weights(c, cage::Mesh(pts));
    for (int i = 0; i < w.point_count(); ++i) {
      double sum = 0.0;
      for (int j = 0; j < w.handle_count(); ++j) sum += w.matrix()(i, j);
      REQUIRE(std::fabs(sum - 1.0) < 1e-10);
    }
  }
}

TEST_CASE("weights match the independent mean value oracle and reconstruct") {
  Rng rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const auto poly = random_convex_hexagon(rng);
    cage::Cage c(poly);
    const Vec2d p = random_interior_point(poly, rng);
    const auto w = cage::compute_weights(c, cage::Mesh({p}));
    const auto oracle = mvc_oracle(poly, p);
    Vec2d rec{0, 0};
    for (int j = 0; j < 6; ++j) {
      REQUIRE(w.matrix()(0, j) == Catch::Approx(oracle[static_cast<std::size_t>(j)]).margin(1e-9));
      rec += poly[static_cast<std::size_t>(j)] * w.matrix()(0, j);
    }
    REQUIRE(norm(rec - p) < 1e-8);
  }
}

TEST_CASE("boundary and exterior points are rejected") {
  cage::Cage c(unit_square());
  REQUIRE_THROWS_AS(cage::compute_weights(c, cage::Mesh({{1.5, 0.5}})), cage::PointOutsideCage);
  REQUIRE_THROWS_AS(cage::compute_weights(c, cage::Mesh({{0.5, 0.0}})), cage::PointOutsideCage);
  REQUIRE_THROWS_AS(cage::compute_weights(c, cage::Mesh({{0.0, 0.0}})), cage::PointOutsideCage);
}

TEST_CASE("degenerate cages are rejected") {
  REQUIRE_THROWS_AS(cage::Cage({{0, 0}, {1, 1}}), cage::DegenerateCage);
  REQUIRE_THROWS_AS(cage::Cage({{0, 0}, {1, 0}, {1, 0}, {0, 1}}), cage::DegenerateCage);
  // bowtie
  REQUIRE_THROWS_AS(cage::Cage({{0, 0}, {1, 1}, {1, 0}, {0, 1}}), cage::DegenerateCage);
}

TEST_CASE("concave simple cages are accepted and keep partition of unity") {
  std::vector<Vec2d> lshape{{0, 0}, {2, 0}, {2, 1}, {1, 1}, {1, 2}, {0, 2}};
  cage::Cage c(lshape);
  const Vec2d p{0.5, 0.5};
  const auto w = cage::compute_weights(c, cage::Mesh({p}));
  double sum = 0.0;
  Vec2d rec{0, 0};
  for (int j = 0; j < 6; ++j) {
    sum += w.matrix()(0, j);
    rec += lshape[static_cast<std::size_t>(j)] * w.matrix()(0, j);
  }
  REQUIRE(std::fabs(sum - 1.0) < 1e-10);
  REQUIRE(norm(rec - p) < 1e-8);
}

TEST_CASE("identity deformation reproduces the rest points") {
  Rng rng(3);
  const auto poly = random_convex_hexagon(rng);
  cage::Cage c(poly);
  std::vector<Vec2d> pts;
  for (int k = 0; k < 6; ++k) pts.push_back(random_interior_point(poly, rng));
  const auto w = cage::compute_weights(c, cage::Mesh(pts));
  const auto out = cage::deform(w, poly);
  for (std::size_t k = 0; k < pts.size(); ++k) REQUIRE(norm(out[k] - pts[k]) < 1e-8);
}

TEST_CASE("deformation is exactly linear: translation and scaling") {
  Rng rng(5);
  const auto poly = random_convex_hexagon(rng);
  cage::Cage c(poly);
  std::vector<Vec2d> pts;
  for (int k = 0; k < 5; ++k) pts.push_back(random_interior_point(poly, rng));
  const auto w = cage::compute_weights(c, cage::Mesh(pts));

  const Vec2d t{1.7, -0.3};
  std::vector<Vec2d> shifted;
  for (const auto& h : poly) shifted.push_back(h + t);
  const auto moved = cage::deform(w, shifted);
  for (std::size_t k = 0; k < pts.size(); ++k)
    REQUIRE(norm(moved[k] - (pts[k] + t)) < 1e-10);

  std::vector<Vec2d> scaled;
  for (const auto& h : poly) scaled.push_back(h * 2.0);
  const auto doubled = cage::deform(w, scaled);
  for (std::size_t k = 0; k < pts.size(); ++k)
    REQUIRE(norm(doubled[k] - pts[k] * 2.0) < 1e-10);
}

TEST_CASE("linear precision under a random affine map") {
  Rng rng(9);
  const auto poly = random_convex_hexagon(rng);
  cage::Cage c(poly);
  std::vector<Vec2d> pts;
  for (int k = 0; k < 5; ++k) pts.push_back(random_interior_point(poly, rng));
  const auto w = cage::compute_weights(c, cage::Mesh(pts));
  const double a = 1.3, b = -0.4, cc = 0.2, d = 0.9, tx = 2.0, ty = -1.0;
  auto aff = [&](const Vec2d& p) { return Vec2d{a * p.x + b * p.y + tx, cc * p.x + d * p.y + ty}; };
  std::vector<Vec2d> mapped;
  for (const auto& h : poly) mapped.push_back(aff(h));
  const auto out = cage::deform(w, mapped);
  for (std::size_t k = 0; k < pts.size(); ++k) REQUIRE(norm(out[k] - aff(pts[k])) < 1e-8);
}

TEST_CASE("weights are reused bitwise across calls") {
  cage::Cage c(unit_square());
  cage::Mesh m({{0.3, 0.4}, {0.6, 0.7}});
  const auto w1 = cage::compute_weights(c, m);
  const auto w2 = cage::compute_weights(c, m);
  for (int i = 0; i < w1.point_count(); ++i)
    for (int j = 0; j < w1.handle_count(); ++j)
      REQUIRE(w1.matrix()(i, j) == w2.matrix()(i, j));  // bitwise
  const auto d1 = cage::deform(w1, c.rest_handles());
  const auto d2 = cage::deform(w1, c.rest_handles());
  for (std::size_t k = 0; k < d1.size(); ++k) {
    REQUIRE(d1[k].x == d2[k].x);
    REQUIRE(d1[k].y == d2[k].y);
  }
}

TEST_CASE("dimension mismatch is rejected") {
  cage::Cage c(unit_square());
  const auto w = cage::compute_weights(c, cage::Mesh({{0.5, 0.5}}));
  std::vector<Vec2d> three{{0, 0}, {1, 0}, {1, 1}};
  REQUIRE_THROWS_AS(cage::deform(w, three), cage::DimensionMismatch);
}

TEST_CASE("jacobian equals the coordinate-expanded weight matrix") {
  Rng rng(13);
  const auto poly = random_convex_hexagon(rng);
  cage::Cage c(poly);
  std::vector<Vec2d> pts;
  for (int k = 0; k < 4; ++k) pts.push_back(random_interior_point(poly, rng));
  const auto w = cage::compute_weights(c, cage::Mesh(pts));
  const Eigen::MatrixXd j = cage::deform_jacobian(w);
  REQUIRE(j.rows() == 2 * w.point_count());
  REQUIRE(j.cols() == 2 * w.handle_count());
  for (int k = 0; k < w.point_count(); ++k)
    for (int h = 0; h < w.handle_count(); ++h) {
      REQUIRE(j(2 * k, 2 * h) == w.matrix()(k, h));
      REQUIRE(j(2 * k + 1, 2 * h + 1) == w.matrix()(k, h));
      REQUIRE(j(2 * k, 2 * h + 1) == 0.0);
      REQUIRE(j(2 * k + 1, 2 * h) == 0.0);
    }

  // finite-difference column check on one handle coordinate
  const double h = 1e-6;
  std::vector<Vec2d> plus = poly, minus = poly;
  plus[2].x += h;
  minus[2].x -= h;
  const auto dp = cage::deform(w, plus);
  const auto dm = cage::deform(w, minus);
  for (int k = 0; k < w.point_count(); ++k) {
    const double fd_x = (dp[static_cast<std::size_t>(k)].x - dm[static_cast<std::size_t>(k)].x) / (2 * h);
    const double fd_y = (dp[static_cast<std::size_t>(k)].y - dm[static_cast<std::size_t>(k)].y) / (2 * h);
    REQUIRE(fd_x == Catch::Approx(j(2 * k, 2 * 2)).epsilon(1e-6).margin(1e-9));
    REQUIRE(fd_y == Catch::Approx(j(2 * k + 1, 2 * 2)).epsilon(1e-6).margin(1e-9));
  }
}

TEST_CASE("empty mesh gives an empty jacobian of the right shape") {
  cage::Cage c(unit_square());
  const auto w = cage::compute_weights(c, cage::Mesh());
  REQUIRE(w.point_count() == 0);
  const Eigen::MatrixXd j = cage::deform_jacobian(w);
  REQUIRE(j.rows() == 0);
  REQUIRE(j.cols() == 8);
}

TEST_CASE("weights csv dump has one row per point") {
  cage::Cage c(unit_square());
  const auto w = cage::compute_weights(c, cage::Mesh({{0.5, 0.5}, {0.25, 0.75}}));
  std::ostringstream os;
  cage::write_weights_csv(os, w);
  int lines = 0;
  for (char ch : os.str())
    if (ch == '\n') ++lines;
  REQUIRE(lines == 3);  // header + 2 rows
}
