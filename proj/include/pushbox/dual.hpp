#pragma once

#include <array>
#include <cmath>

namespace pushbox {

// Minimal forward-mode scalar with a fixed-width gradient. Wide enough to
// carry derivatives w.r.t. the full decision vector plus the step inputs in a
// single evaluation, so the Newton Jacobian and the sensitivity right-hand
// sides come from the same arithmetic as the residual itself.
template <int N>
struct Dual {
  double v{0.0};
  std::array<double, N> g{};

  Dual() = default;
  Dual(double val) : v(val) {}  // NOLINT: implicit by design

  static Dual seeded(double val, int lane) {
    Dual d(val);
    d.g[lane] = 1.0;
    return d;
  }

  Dual operator-() const {
    Dual r(-v);
    for (int i = 0; i < N; ++i) r.g[i] = -g[i];
    return r;
  }

  Dual& operator+=(const Dual& o) {
    v += o.v;
    for (int i = 0; i < N; ++i) g[i] += o.g[i];
    return *this;
  }
  Dual& operator-=(const Dual& o) {
    v -= o.v;
    for (int i = 0; i < N; ++i) g[i] -= o.g[i];
    return *this;
  }

  friend Dual operator+(Dual a, const Dual& b) { return a += b; }
  friend Dual operator-(Dual a, const Dual& b) { return a -= b; }

  friend Dual operator*(const Dual& a, const Dual& b) {
    Dual r(a.v * b.v);
    for (int i = 0; i < N; ++i) r.g[i] = a.v * b.g[i] + b.v * a.g[i];
    return r;
  }
  friend Dual operator/(const Dual& a, const Dual& b) {
    Dual r(a.v / b.v);
    const double inv = 1.0 / b.v;
    for (int i = 0; i < N; ++i) r.g[i] = (a.g[i] - r.v * b.g[i]) * inv;
    return r;
  }

  friend Dual operator*(double s, Dual a) {
    a.v *= s;
    for (int i = 0; i < N; ++i) a.g[i] *= s;
    return a;
  }
  friend Dual operator*(const Dual& a, double s) { return s * a; }
  friend Dual operator/(Dual a, double s) { return (1.0 / s) * a; }

  friend Dual sqrt(const Dual& a) {
    Dual r(std::sqrt(a.v));
    const double d = 0.5 / r.v;
    for (int i = 0; i < N; ++i) r.g[i] = d * a.g[i];
    return r;
  }
  friend Dual sin(const Dual& a) {
    Dual r(std::sin(a.v));
    const double c = std::cos(a.v);
    for (int i = 0; i < N; ++i) r.g[i] = c * a.g[i];
    return r;
  }
  friend Dual cos(const Dual& a) {
    Dual r(std::cos(a.v));
    const double s = -std::sin(a.v);
    for (int i = 0; i < N; ++i) r.g[i] = s * a.g[i];
    return r;
  }
};

inline double value_of(double x) { return x; }
template <int N>
double value_of(const Dual<N>& x) {
  return x.v;
}

}  // namespace pushbox
