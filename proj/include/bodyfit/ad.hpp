#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <vector>

namespace bodyfit::ad {

// Reverse-mode automatic differentiation on a per-evaluation tape.
//
// Each recorded node stores the local partial derivatives w.r.t. its (at most
// two) parents; a backward sweep accumulates adjoints. Variables without a
// tape are constants and record nothing, so masked-out parameters cost no
// tape space. One Tape instance per evaluation; independent evaluations on
// separate tapes are safe to run concurrently.

class Tape {
 public:
  struct Node {
    double w0, w1;
    int32_t p0, p1;
  };

  int32_t push(double w0, int32_t p0, double w1, int32_t p1) {
    nodes_.push_back({w0, w1, p0, p1});
    return static_cast<int32_t>(nodes_.size()) - 1;
  }
  int32_t push_leaf() { return push(0.0, -1, 0.0, -1); }

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }
  void reserve(std::size_t n) { nodes_.reserve(n); }

  // Adjoints of every node w.r.t. the node `output`.
  std::vector<double> backward(int32_t output) const {
    std::vector<double> adj(nodes_.size(), 0.0);
    if (output < 0) return adj;
    adj[output] = 1.0;
    for (int32_t k = static_cast<int32_t>(nodes_.size()) - 1; k >= 0; --k) {
      const double a = adj[k];
      if (a == 0.0) continue;
      const Node& n = nodes_[k];
      if (n.p0 >= 0) adj[n.p0] += n.w0 * a;
      if (n.p1 >= 0) adj[n.p1] += n.w1 * a;
    }
    return adj;
  }

 private:
  std::vector<Node> nodes_;
};

struct Var {
  double v = 0.0;
  int32_t i = -1;
  Tape* t = nullptr;

  Var() = default;
  Var(double c) : v(c) {}  // implicit: plain doubles act as constants
  Var(double val, int32_t idx, Tape* tape) : v(val), i(idx), t(tape) {}

  double val() const { return v; }
  bool is_const() const { return t == nullptr; }
};

inline Var leaf(Tape& tape, double value) { return Var(value, tape.push_leaf(), &tape); }

namespace detail {
inline Tape* tape_of(const Var& a, const Var& b) {
  assert(!(a.t && b.t && a.t != b.t) && "variables from different tapes");
  return a.t ? a.t : b.t;
}
}  // namespace detail

inline Var operator+(const Var& a, const Var& b) {
  Tape* t = detail::tape_of(a, b);
  if (!t) return Var(a.v + b.v);
  return Var(a.v + b.v, t->push(1.0, a.i, 1.0, b.i), t);
}
inline Var operator-(const Var& a, const Var& b) {
  Tape* t = detail::tape_of(a, b);
  if (!t) return Var(a.v - b.v);
  return Var(a.v - b.v, t->push(1.0, a.i, -1.0, b.i), t);
}
inline Var operator-(const Var& a) {
  if (!a.t) return Var(-a.v);
  return Var(-a.v, a.t->push(-1.0, a.i, 0.0, -1), a.t);
}
inline Var operator*(const Var& a, const Var& b) {
  Tape* t = detail::tape_of(a, b);
  if (!t) return Var(a.v * b.v);
  return Var(a.v * b.v, t->push(b.v, a.i, a.v, b.i), t);
}
inline Var operator/(const Var& a, const Var& b) {
  Tape* t = detail::tape_of(a, b);
  const double r = a.v / b.v;
  if (!t) return Var(r);
  return Var(r, t->push(1.0 / b.v, a.i, -r / b.v, b.i), t);
}

inline Var& operator+=(Var& a, const Var& b) { a = a + b; return a; }
inline Var& operator-=(Var& a, const Var& b) { a = a - b; return a; }
inline Var& operator*=(Var& a, const Var& b) { a = a * b; return a; }

inline bool operator<(const Var& a, const Var& b) { return a.v < b.v; }
inline bool operator>(const Var& a, const Var& b) { return a.v > b.v; }

inline Var sqrt(const Var& a) {
  const double r = std::sqrt(a.v);
  if (!a.t) return Var(r);
  return Var(r, a.t->push(0.5 / r, a.i, 0.0, -1), a.t);
}
inline Var exp(const Var& a) {
  const double r = std::exp(a.v);
  if (!a.t) return Var(r);
  return Var(r, a.t->push(r, a.i, 0.0, -1), a.t);
}
inline Var log(const Var& a) {
  const double r = std::log(a.v);
  if (!a.t) return Var(r);
  return Var(r, a.t->push(1.0 / a.v, a.i, 0.0, -1), a.t);
}
inline Var sin(const Var& a) {
  if (!a.t) return Var(std::sin(a.v));
  return Var(std::sin(a.v), a.t->push(std::cos(a.v), a.i, 0.0, -1), a.t);
}
inline Var cos(const Var& a) {
  if (!a.t) return Var(std::cos(a.v));
  return Var(std::cos(a.v), a.t->push(-std::sin(a.v), a.i, 0.0, -1), a.t);
}

// Found by argument-dependent lookup from templated numeric code.
inline double value_of(const Var& x) { return x.v; }

}  // namespace bodyfit::ad
