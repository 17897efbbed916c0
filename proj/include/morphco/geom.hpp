#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

namespace morphco {

template <class T>
struct Vec2 {
  T x{};
  T y{};

  Vec2() = default;
  Vec2(T xx, T yy) : x(xx), y(yy) {}

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator-() const { return {-x, -y}; }
  Vec2 operator*(const T& s) const { return {x * s, y * s}; }
  Vec2& operator+=(const Vec2& o) {
    x = x + o.x;
    y = y + o.y;
    return *this;
  }
  Vec2& operator-=(const Vec2& o) {
    x = x - o.x;
    y = y - o.y;
    return *this;
  }
};

template <class T>
Vec2<T> operator*(const T& s, const Vec2<T>& v) {
  return {s * v.x, s * v.y};
}

template <class T>
T dot(const Vec2<T>& a, const Vec2<T>& b) {
  return a.x * b.x + a.y * b.y;
}

template <class T>
T cross(const Vec2<T>& a, const Vec2<T>& b) {
  return a.x * b.y - a.y * b.x;
}

// 90-degree counterclockwise rotation; perp(v) = d/dphi R(phi) v at phi = 0.
template <class T>
Vec2<T> perp(const Vec2<T>& v) {
  return {-v.y, v.x};
}

template <class T>
T norm(const Vec2<T>& v) {
  using std::sqrt;
  return sqrt(v.x * v.x + v.y * v.y);
}

// Rotation by angle given as (cos, sin) so callers can hoist the trig.
template <class T>
Vec2<T> rotate(const T& c, const T& s, const Vec2<T>& v) {
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

using Vec2d = Vec2<double>;

// Signed area of a closed polygon (positive for counterclockwise order).
template <class T>
T polygon_area(const std::vector<Vec2<T>>& v) {
  T a{};
  const std::size_t n = v.size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = (i + 1) % n;
    a = a + cross(v[i], v[j]);
  }
  return a * T(0.5);
}

template <class T>
Vec2<T> polygon_centroid(const std::vector<Vec2<T>>& v) {
  T a{};
  Vec2<T> c{};
  const std::size_t n = v.size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = (i + 1) % n;
    const T w = cross(v[i], v[j]);
    a = a + w;
    c = c + (v[i] + v[j]) * w;
  }
  const T inv = T(1) / (T(3) * a);
  return c * inv;
}

// Second polar moment of area about the origin, for unit density:
// integral of (x^2 + y^2) dA. Multiply by density for the mass moment.
template <class T>
T polygon_second_moment_origin(const std::vector<Vec2<T>>& v) {
  T acc{};
  const std::size_t n = v.size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = (i + 1) % n;
    const T w = cross(v[i], v[j]);
    const T term = v[i].x * v[i].x + v[i].x * v[j].x + v[j].x * v[j].x +
                   v[i].y * v[i].y + v[i].y * v[j].y + v[j].y * v[j].y;
    acc = acc + w * term;
  }
  return acc * (T(1) / T(12));
}

inline double distance_point_segment(const Vec2d& p, const Vec2d& a, const Vec2d& b) {
  const Vec2d ab = b - a;
  const double len2 = dot(ab, ab);
  if (len2 == 0.0) return norm(p - a);
  double t = dot(p - a, ab) / len2;
  t = t < 0.0 ? 0.0 : (t > 1.0 ? 1.0 : t);
  return norm(p - (a + ab * t));
}

inline double polygon_boundary_distance(const std::vector<Vec2d>& poly, const Vec2d& p) {
  double d = std::numeric_limits<double>::infinity();
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double di = distance_point_segment(p, poly[i], poly[(i + 1) % n]);
    if (di < d) d = di;
  }
  return d;
}

// Crossing-number containment; points within boundary_eps of an edge are
// reported as not strictly inside.
inline bool point_strictly_inside(const std::vector<Vec2d>& poly, const Vec2d& p,
                                  double boundary_eps) {
  if (polygon_boundary_distance(poly, p) <= boundary_eps) return false;
  bool inside = false;
  const std::size_t n = poly.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const bool straddles = (poly[i].y > p.y) != (poly[j].y > p.y);
    if (straddles) {
      const double xint =
          poly[j].x + (poly[i].x - poly[j].x) * (p.y - poly[j].y) / (poly[i].y - poly[j].y);
      if (p.x < xint) inside = !inside;
    }
  }
  return inside;
}

namespace detail {
inline int orient(const Vec2d& a, const Vec2d& b, const Vec2d& c, double eps) {
  const double v = cross(b - a, c - a);
  if (v > eps) return 1;
  if (v < -eps) return -1;
  return 0;
}
inline bool on_segment(const Vec2d& a, const Vec2d& b, const Vec2d& p, double eps) {
  return distance_point_segment(p, a, b) <= eps;
}
}  // namespace detail

// Segment intersection including touching endpoints and collinear overlap.
inline bool segments_intersect(const Vec2d& a, const Vec2d& b, const Vec2d& c, const Vec2d& d,
                               double eps) {
  using detail::on_segment;
  using detail::orient;
  const int o1 = orient(a, b, c, eps);
  const int o2 = orient(a, b, d, eps);
  const int o3 = orient(c, d, a, eps);
  const int o4 = orient(c, d, b, eps);
  if (o1 != o2 && o3 != o4) return true;
  if (o1 == 0 && on_segment(a, b, c, eps)) return true;
  if (o2 == 0 && on_segment(a, b, d, eps)) return true;
  if (o3 == 0 && on_segment(c, d, a, eps)) return true;
  if (o4 == 0 && on_segment(c, d, b, eps)) return true;
  return false;
}

// Simple = no repeated vertices and no contact between non-adjacent edges.
inline bool polygon_is_simple(const std::vector<Vec2d>& v, double eps) {
  const std::size_t n = v.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (norm(v[i] - v[j]) <= eps) return false;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      // skip adjacent edges (they share a vertex by construction)
      if (j == i + 1 || (i == 0 && j == n - 1)) continue;
      if (segments_intersect(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n], eps)) return false;
    }
  }
  return true;
}

}  // namespace morphco
