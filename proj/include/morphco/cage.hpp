#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdio>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "morphco/geom.hpp"

// Cage-based deformation for planar shapes. A sparse simple polygon of
// handle points controls a denser set of interior points: each interior
// point is a fixed linear combination of the handles, with mean value
// coordinates as the weights. The weights are computed once from the rest
// configuration and reused for every subsequent deformation, which keeps the
// handle-to-point map exactly linear.

namespace morphco::cage {

struct PointOutsideCage : std::runtime_error {
  explicit PointOutsideCage(const std::string& m) : std::runtime_error(m) {}
};
struct DegenerateCage : std::runtime_error {
  explicit DegenerateCage(const std::string& m) : std::runtime_error(m) {}
};
struct DimensionMismatch : std::runtime_error {
  explicit DimensionMismatch(const std::string& m) : std::runtime_error(m) {}
};

// Rest polygon of handle positions. Immutable; validated on construction.
class Cage {
 public:
  explicit Cage(std::vector<Vec2d> rest_handles) : rest_(std::move(rest_handles)) {
    if (rest_.size() < 3) throw DegenerateCage("cage needs at least 3 handles");
    if (!polygon_is_simple(rest_, simple_eps(rest_)))
      throw DegenerateCage("cage polygon is self-intersecting or has repeated vertices");
  }

  const std::vector<Vec2d>& rest_handles() const { return rest_; }
  int handle_count() const { return static_cast<int>(rest_.size()); }

  static double simple_eps(const std::vector<Vec2d>& poly) {
    double scale = 0.0;
    for (const auto& p : poly) scale = std::max(scale, std::max(std::fabs(p.x), std::fabs(p.y)));
    return 1e-12 * std::max(scale, 1.0);
  }

 private:
  std::vector<Vec2d> rest_;
};

// Rest positions of the controlled points.
class Mesh {
 public:
  Mesh() = default;
  explicit Mesh(std::vector<Vec2d> rest_points) : rest_(std::move(rest_points)) {}
  const std::vector<Vec2d>& rest_points() const { return rest_; }
  int point_count() const { return static_cast<int>(rest_.size()); }

 private:
  std::vector<Vec2d> rest_;
};

// points x handles weight matrix; every row sums to one.
class DeformWeights {
 public:
  DeformWeights() = default;
  explicit DeformWeights(Eigen::MatrixXd w) : w_(std::move(w)) {}
  const Eigen::MatrixXd& matrix() const { return w_; }
  int point_count() const { return static_cast<int>(w_.rows()); }
  int handle_count() const { return static_cast<int>(w_.cols()); }

 private:
  Eigen::MatrixXd w_;
};

// Mean value coordinates of one interior point with respect to a simple
// polygon, after Floater. tan(alpha_i/2) is evaluated as
// cross_i / (r_i r_{i+1} + dot_i), which is finite for every point that is
// strictly interior (the only pole is on the polygon boundary itself).
inline void mvc_row(const std::vector<Vec2d>& handles, const Vec2d& p, double* out) {
  const int n = static_cast<int>(handles.size());
  std::vector<Vec2d> e(static_cast<std::size_t>(n));
  std::vector<double> r(static_cast<std::size_t>(n)), t(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    e[i] = handles[i] - p;
    r[i] = norm(e[i]);
  }
  for (int i = 0; i < n; ++i) {
    const int j = (i + 1) % n;
    const double c = cross(e[i], e[j]);
    const double d = dot(e[i], e[j]);
    t[i] = c / (r[i] * r[j] + d);
  }
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const int prev = (i + n - 1) % n;
    const double w = (t[prev] + t[i]) / r[i];
    out[i] = w;
    sum += w;
  }
  const double inv = 1.0 / sum;
  for (int i = 0; i < n; ++i) out[i] *= inv;
}

inline DeformWeights compute_weights(const Cage& cage, const Mesh& mesh) {
  const auto& handles = cage.rest_handles();
  if (!polygon_is_simple(handles, Cage::simple_eps(handles)))
    throw DegenerateCage("cage polygon is self-intersecting or has repeated vertices");

  // Boundary tolerance relative to the cage extent; points this close to an
  // edge would make the MVC terms blow up.
  double diag = 0.0;
  for (const auto& h : handles) diag = std::max(diag, std::max(std::fabs(h.x), std::fabs(h.y)));
  const double boundary_eps = 1e-9 * std::max(diag, 1.0);

  Eigen::MatrixXd w(mesh.point_count(), cage.handle_count());
  std::vector<double> row(static_cast<std::size_t>(cage.handle_count()));
  for (int k = 0; k < mesh.point_count(); ++k) {
    const Vec2d& p = mesh.rest_points()[static_cast<std::size_t>(k)];
    if (!point_strictly_inside(handles, p, boundary_eps))
      throw PointOutsideCage("mesh rest point " + std::to_string(k) +
                             " is outside or on the cage boundary");
    mvc_row(handles, p, row.data());
    for (int j = 0; j < cage.handle_count(); ++j) w(k, j) = row[static_cast<std::size_t>(j)];
  }
  return DeformWeights(std::move(w));
}

// m_k = sum_j w_kj * new_handles[j]; exact linearity in the handles.
template <class T>
std::vector<Vec2<T>> deform(const DeformWeights& w, const std::vector<Vec2<T>>& new_handles) {
  if (static_cast<int>(new_handles.size()) != w.handle_count())
    throw DimensionMismatch("deform: expected " + std::to_string(w.handle_count()) +
                            " handles, got " + std::to_string(new_handles.size()));
  std::vector<Vec2<T>> out(static_cast<std::size_t>(w.point_count()));
  const Eigen::MatrixXd& m = w.matrix();
  for (int k = 0; k < w.point_count(); ++k) {
    Vec2<T> acc{};
    for (int j = 0; j < w.handle_count(); ++j) acc += new_handles[static_cast<std::size_t>(j)] * T(m(k, j));
    out[static_cast<std::size_t>(k)] = acc;
  }
  return out;
}

// d(points)/d(handles) of the map above: the weight matrix expanded over the
// two coordinates, constant in the handle positions. Layout: row 2k+a is
// point k coordinate a, column 2j+b is handle j coordinate b.
inline Eigen::MatrixXd deform_jacobian(const DeformWeights& w) {
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(2 * w.point_count(), 2 * w.handle_count());
  for (int k = 0; k < w.point_count(); ++k) {
    for (int h = 0; h < w.handle_count(); ++h) {
      j(2 * k, 2 * h) = w.matrix()(k, h);
      j(2 * k + 1, 2 * h + 1) = w.matrix()(k, h);
    }
  }
  return j;
}

// Debug dump: one row per mesh point, one column per handle.
inline void write_weights_csv(std::ostream& os, const DeformWeights& w) {
  for (int j = 0; j < w.handle_count(); ++j) os << (j ? ",h" : "h") << j;
  os << "\n";
  char buf[32];
  for (int k = 0; k < w.point_count(); ++k) {
    for (int j = 0; j < w.handle_count(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", w.matrix()(k, j));
      os << (j ? "," : "") << buf;
    }
    os << "\n";
  }
}

}  // namespace morphco::cage
