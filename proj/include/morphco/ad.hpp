#pragma once

#include <array>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <vector>

// Scalar automatic differentiation.
//
// ad::Var is a tape-recorded scalar for reverse mode: running a computation
// with Var performs exactly the same double arithmetic as running it with
// double (same operations, same order), while recording local partials on a
// side tape. A single reverse sweep over the tape then yields the gradient
// of one output with respect to every registered input — the discrete
// adjoint of whatever time-stepping loop was executed.
//
// ad::Dual<N> is a forward-mode scalar carrying N directional derivatives,
// used where the input dimension is small and fixed.

namespace morphco::ad {

class Tape {
 public:
  struct Node {
    double w0, w1;
    std::int32_t p0, p1;
  };

  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }
  void reserve(std::size_t n) { nodes_.reserve(n); }

  std::int32_t input() { return push(0.0, -1, 0.0, -1); }

  std::int32_t unary(double w, std::int32_t p) { return push(w, p, 0.0, -1); }

  std::int32_t binary(double w0, std::int32_t p0, double w1, std::int32_t p1) {
    return push(w0, p0, w1, p1);
  }

  // Adjoint sweep seeded at `root`; adj is resized and overwritten.
  void reverse(std::int32_t root, std::vector<double>& adj) const {
    adj.assign(nodes_.size(), 0.0);
    if (root < 0) return;
    adj[static_cast<std::size_t>(root)] = 1.0;
    for (std::int32_t i = static_cast<std::int32_t>(nodes_.size()) - 1; i >= 0; --i) {
      const double a = adj[static_cast<std::size_t>(i)];
      if (a == 0.0) continue;
      const Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.p0 >= 0) adj[static_cast<std::size_t>(n.p0)] += n.w0 * a;
      if (n.p1 >= 0) adj[static_cast<std::size_t>(n.p1)] += n.w1 * a;
    }
  }

 private:
  std::int32_t push(double w0, std::int32_t p0, double w1, std::int32_t p1) {
    nodes_.push_back(Node{w0, w1, p0, p1});
    return static_cast<std::int32_t>(nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

inline thread_local Tape* g_tape = nullptr;

// RAII activation of a tape on the current thread.
struct TapeScope {
  explicit TapeScope(Tape& t) : prev(g_tape) { g_tape = &t; }
  ~TapeScope() { g_tape = prev; }
  Tape* prev;
};

// A value plus its tape index. Index -1 marks a constant (no node, zero
// derivative), so lifting literals costs nothing.
struct Var {
  double v = 0.0;
  std::int32_t i = -1;

  Var() = default;
  Var(double value) : v(value), i(-1) {}  // NOLINT: implicit lift of constants
  Var(double value, std::int32_t idx) : v(value), i(idx) {}

  static Var input(double value) {
    assert(g_tape != nullptr);
    return Var(value, g_tape->input());
  }

  Var& operator+=(const Var& o) { return *this = *this + o; }
  Var& operator-=(const Var& o) { return *this = *this - o; }
  Var& operator*=(const Var& o) { return *this = *this * o; }
  Var& operator/=(const Var& o) { return *this = *this / o; }

  friend Var operator+(const Var& a, const Var& b) {
    const double r = a.v + b.v;
    if (a.i < 0 && b.i < 0) return r;
    if (b.i < 0) return Var(r, g_tape->unary(1.0, a.i));
    if (a.i < 0) return Var(r, g_tape->unary(1.0, b.i));
    return Var(r, g_tape->binary(1.0, a.i, 1.0, b.i));
  }
  friend Var operator-(const Var& a, const Var& b) {
    const double r = a.v - b.v;
    if (a.i < 0 && b.i < 0) return r;
    if (b.i < 0) return Var(r, g_tape->unary(1.0, a.i));
    if (a.i < 0) return Var(r, g_tape->unary(-1.0, b.i));
    return Var(r, g_tape->binary(1.0, a.i, -1.0, b.i));
  }
  friend Var operator-(const Var& a) {
    if (a.i < 0) return -a.v;
    return Var(-a.v, g_tape->unary(-1.0, a.i));
  }
  friend Var operator*(const Var& a, const Var& b) {
    const double r = a.v * b.v;
    if (a.i < 0 && b.i < 0) return r;
    if (b.i < 0) return Var(r, g_tape->unary(b.v, a.i));
    if (a.i < 0) return Var(r, g_tape->unary(a.v, b.i));
    return Var(r, g_tape->binary(b.v, a.i, a.v, b.i));
  }
  friend Var operator/(const Var& a, const Var& b) {
    const double r = a.v / b.v;
    const double inv = 1.0 / b.v;
    if (a.i < 0 && b.i < 0) return r;
    if (b.i < 0) return Var(r, g_tape->unary(inv, a.i));
    if (a.i < 0) return Var(r, g_tape->unary(-r * inv, b.i));
    return Var(r, g_tape->binary(inv, a.i, -r * inv, b.i));
  }

  friend bool operator<(const Var& a, const Var& b) { return a.v < b.v; }
  friend bool operator>(const Var& a, const Var& b) { return a.v > b.v; }
  friend bool operator<=(const Var& a, const Var& b) { return a.v <= b.v; }
  friend bool operator>=(const Var& a, const Var& b) { return a.v >= b.v; }
};

inline Var sin(const Var& a) {
  const double r = std::sin(a.v);
  if (a.i < 0) return r;
  return Var(r, g_tape->unary(std::cos(a.v), a.i));
}
inline Var cos(const Var& a) {
  const double r = std::cos(a.v);
  if (a.i < 0) return r;
  return Var(r, g_tape->unary(-std::sin(a.v), a.i));
}
inline Var tanh(const Var& a) {
  const double r = std::tanh(a.v);
  if (a.i < 0) return r;
  return Var(r, g_tape->unary(1.0 - r * r, a.i));
}
inline Var sqrt(const Var& a) {
  const double r = std::sqrt(a.v);
  if (a.i < 0) return r;
  return Var(r, g_tape->unary(0.5 / r, a.i));
}
inline Var exp(const Var& a) {
  const double r = std::exp(a.v);
  if (a.i < 0) return r;
  return Var(r, g_tape->unary(r, a.i));
}
inline Var log(const Var& a) {
  const double r = std::log(a.v);
  if (a.i < 0) return r;
  return Var(r, g_tape->unary(1.0 / a.v, a.i));
}
inline Var acos(const Var& a) {
  const double r = std::acos(a.v);
  if (a.i < 0) return r;
  return Var(r, g_tape->unary(-1.0 / std::sqrt(1.0 - a.v * a.v), a.i));
}
inline Var atan2(const Var& y, const Var& x) {
  const double r = std::atan2(y.v, x.v);
  const double d = x.v * x.v + y.v * y.v;
  if (y.i < 0 && x.i < 0) return r;
  if (x.i < 0) return Var(r, g_tape->unary(x.v / d, y.i));
  if (y.i < 0) return Var(r, g_tape->unary(-y.v / d, x.i));
  return Var(r, g_tape->binary(x.v / d, y.i, -y.v / d, x.i));
}
inline Var fabs(const Var& a) {
  if (a.i < 0) return std::fabs(a.v);
  return Var(std::fabs(a.v), g_tape->unary(a.v >= 0.0 ? 1.0 : -1.0, a.i));
}
// Branch selection: the subgradient follows the chosen argument.
inline Var min(const Var& a, const Var& b) { return a.v <= b.v ? a : b; }
inline Var max(const Var& a, const Var& b) { return a.v >= b.v ? a : b; }

// ---------------------------------------------------------------------------

template <int N>
struct Dual {
  double v = 0.0;
  std::array<double, N> d{};

  Dual() = default;
  Dual(double value) : v(value) { d.fill(0.0); }  // NOLINT
  static Dual seed(double value, int k) {
    Dual r(value);
    r.d[static_cast<std::size_t>(k)] = 1.0;
    return r;
  }

  Dual& operator+=(const Dual& o) { return *this = *this + o; }
  Dual& operator-=(const Dual& o) { return *this = *this - o; }
  Dual& operator*=(const Dual& o) { return *this = *this * o; }

  friend Dual operator+(const Dual& a, const Dual& b) {
    Dual r;
    r.v = a.v + b.v;
    for (int k = 0; k < N; ++k) r.d[k] = a.d[k] + b.d[k];
    return r;
  }
  friend Dual operator-(const Dual& a, const Dual& b) {
    Dual r;
    r.v = a.v - b.v;
    for (int k = 0; k < N; ++k) r.d[k] = a.d[k] - b.d[k];
    return r;
  }
  friend Dual operator-(const Dual& a) {
    Dual r;
    r.v = -a.v;
    for (int k = 0; k < N; ++k) r.d[k] = -a.d[k];
    return r;
  }
  friend Dual operator*(const Dual& a, const Dual& b) {
    Dual r;
    r.v = a.v * b.v;
    for (int k = 0; k < N; ++k) r.d[k] = a.d[k] * b.v + a.v * b.d[k];
    return r;
  }
  friend Dual operator/(const Dual& a, const Dual& b) {
    Dual r;
    const double inv = 1.0 / b.v;
    r.v = a.v * inv;
    for (int k = 0; k < N; ++k) r.d[k] = (a.d[k] - r.v * b.d[k]) * inv;
    return r;
  }
  friend bool operator<(const Dual& a, const Dual& b) { return a.v < b.v; }
  friend bool operator>(const Dual& a, const Dual& b) { return a.v > b.v; }
  friend bool operator<=(const Dual& a, const Dual& b) { return a.v <= b.v; }
  friend bool operator>=(const Dual& a, const Dual& b) { return a.v >= b.v; }
};

template <int N>
Dual<N> sqrt(const Dual<N>& a) {
  Dual<N> r;
  r.v = std::sqrt(a.v);
  const double w = 0.5 / r.v;
  for (int k = 0; k < N; ++k) r.d[k] = w * a.d[k];
  return r;
}
template <int N>
Dual<N> sin(const Dual<N>& a) {
  Dual<N> r;
  r.v = std::sin(a.v);
  const double w = std::cos(a.v);
  for (int k = 0; k < N; ++k) r.d[k] = w * a.d[k];
  return r;
}
template <int N>
Dual<N> cos(const Dual<N>& a) {
  Dual<N> r;
  r.v = std::cos(a.v);
  const double w = -std::sin(a.v);
  for (int k = 0; k < N; ++k) r.d[k] = w * a.d[k];
  return r;
}
template <int N>
Dual<N> min(const Dual<N>& a, const Dual<N>& b) {
  return a.v <= b.v ? a : b;
}
template <int N>
Dual<N> max(const Dual<N>& a, const Dual<N>& b) {
  return a.v >= b.v ? a : b;
}

}  // namespace morphco::ad

namespace morphco {

// Plain value of a possibly-AD scalar; all control flow in templated
// numerical code branches on val(x) so double and AD paths stay in lockstep.
inline double val(double x) { return x; }
inline double val(const ad::Var& x) { return x.v; }
template <int N>
double val(const ad::Dual<N>& x) {
  return x.v;
}

}  // namespace morphco
