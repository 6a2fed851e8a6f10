#pragma once

#include <cmath>

#include "chaosgrad/core/error.hpp"

namespace chaosgrad::ad {

/// Forward-mode carrier: a value and one directional derivative.
///
/// Implicitly constructible from double so the same generic code can mix
/// literals with active values. min/max/abs follow the tape's kink
/// convention: ties pick the left operand, abs'(0) = +1.
struct Dual {
  double value = 0.0;
  double tangent = 0.0;

  constexpr Dual() = default;
  constexpr Dual(double v, double t = 0.0) : value(v), tangent(t) {}  // NOLINT

  Dual& operator+=(const Dual& o) { return *this = *this + o; }
  Dual& operator-=(const Dual& o) { return *this = *this - o; }
  Dual& operator*=(const Dual& o) { return *this = *this * o; }
  Dual& operator/=(const Dual& o) { return *this = *this / o; }

  friend constexpr Dual operator+(const Dual& a, const Dual& b) {
    return {a.value + b.value, a.tangent + b.tangent};
  }
  friend constexpr Dual operator-(const Dual& a, const Dual& b) {
    return {a.value - b.value, a.tangent - b.tangent};
  }
  friend constexpr Dual operator*(const Dual& a, const Dual& b) {
    return {a.value * b.value, a.value * b.tangent + b.value * a.tangent};
  }
  friend constexpr Dual operator/(const Dual& a, const Dual& b) {
    const double q = a.value / b.value;
    return {q, (a.tangent - q * b.tangent) / b.value};
  }
  friend constexpr Dual operator-(const Dual& a) { return {-a.value, -a.tangent}; }
};

inline double value_of(const Dual& x) { return x.value; }

inline Dual sin(const Dual& x) { return {std::sin(x.value), std::cos(x.value) * x.tangent}; }
inline Dual cos(const Dual& x) { return {std::cos(x.value), -std::sin(x.value) * x.tangent}; }

inline Dual exp(const Dual& x) {
  const double e = std::exp(x.value);
  return {e, e * x.tangent};
}

inline Dual log(const Dual& x) {
  if (x.value < 0.0) throw DomainError("log of a negative number");
  return {std::log(x.value), x.tangent / x.value};
}

inline Dual tanh(const Dual& x) {
  const double t = std::tanh(x.value);
  return {t, (1.0 - t * t) * x.tangent};
}

inline Dual sqrt(const Dual& x) {
  if (x.value < 0.0) throw DomainError("sqrt of a negative number");
  const double r = std::sqrt(x.value);
  return {r, x.tangent / (2.0 * r)};
}

inline Dual abs(const Dual& x) {
  return x.value >= 0.0 ? x : Dual{-x.value, -x.tangent};
}

inline Dual pow(const Dual& x, double p) {
  return {std::pow(x.value, p), p * std::pow(x.value, p - 1.0) * x.tangent};
}

inline Dual pow(const Dual& x, const Dual& y) {
  const double v = std::pow(x.value, y.value);
  double dy = 0.0;
  if (y.tangent != 0.0) {
    if (x.value < 0.0) throw DomainError("pow with negative base and active exponent");
    dy = v * std::log(x.value) * y.tangent;
  }
  return {v, y.value * std::pow(x.value, y.value - 1.0) * x.tangent + dy};
}

inline Dual min(const Dual& a, const Dual& b) { return a.value <= b.value ? a : b; }
inline Dual max(const Dual& a, const Dual& b) { return a.value >= b.value ? a : b; }

}  // namespace chaosgrad::ad
