#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "chaosgrad/core/error.hpp"
#include "chaosgrad/core/linalg.hpp"
#include "chaosgrad/systems/system.hpp"

// The system zoo. Each model is written once, generically over the scalar
// type, using std:: math for double and the ad:: overloads found by ADL for
// the active scalar types.

namespace chaosgrad::systems {

namespace detail {

template <class T>
std::vector<T> matvec(const Matrix& a, std::span<const T> s) {
  std::vector<T> out(a.rows(), T(0.0));
  for (std::size_t i = 0; i < a.rows(); ++i) {
    bool first = true;
    T acc(0.0);
    for (std::size_t j = 0; j < a.cols(); ++j) {
      const double aij = a(i, j);
      if (aij == 0.0) continue;
      if (first) {
        acc = aij * s[j];
        first = false;
      } else {
        acc = acc + aij * s[j];
      }
    }
    out[i] = acc;
  }
  return out;
}

template <class T>
T mean_square(std::span<const T> s) {
  T acc(0.0);
  for (const T& x : s) acc = acc + x * x;
  return acc / static_cast<double>(s.size());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear and time-varying linear maps

enum class LinearLoss { SumOfFinalState, MeanSquaredState };

struct LinearMapModel {
  Matrix a;
  LinearLoss loss_kind = LinearLoss::MeanSquaredState;

  template <class T>
  std::vector<T> step(std::span<const T> s, std::span<const T>, StepContext) const {
    return detail::matvec<T>(a, s);
  }

  template <class T>
  T loss(std::span<const T> s, std::span<const T>, StepContext ctx) const {
    if (loss_kind == LinearLoss::MeanSquaredState) return detail::mean_square<T>(s);
    if (ctx.t != ctx.horizon) return T(0.0);
    T acc(0.0);
    for (const T& x : s) acc = acc + x;
    return acc;
  }
};

/// s_{k+1} = A s_k with no parameters.
inline SystemSpec make_linear_map(const Matrix& a, LinearLoss loss = LinearLoss::MeanSquaredState) {
  require_square(a, "make_linear_map");
  const std::size_t n = a.rows();
  std::map<std::string, std::string> meta{
      {"loss", loss == LinearLoss::MeanSquaredState ? "mean-squared-state" : "sum-of-final-state"}};
  return make_system("linear", n, 0, LinearMapModel{a, loss}, Vector(n, 1.0), {}, meta);
}

struct TimeVaryingMapModel {
  std::vector<Matrix> sequence;

  template <class T>
  std::vector<T> step(std::span<const T> s, std::span<const T>, StepContext ctx) const {
    if (ctx.t >= sequence.size()) {
      throw DimensionError("time-varying map: step " + std::to_string(ctx.t) +
                           " beyond the matrix sequence (" + std::to_string(sequence.size()) +
                           " matrices)");
    }
    return detail::matvec<T>(sequence[ctx.t], s);
  }

  template <class T>
  T loss(std::span<const T> s, std::span<const T>, StepContext) const {
    return detail::mean_square<T>(s);
  }
};

/// Step t applies sequence[t]; the loss is the mean squared state.
inline SystemSpec make_time_varying_map(std::vector<Matrix> sequence) {
  if (sequence.empty()) throw DimensionError("make_time_varying_map: empty sequence");
  const std::size_t n = sequence.front().rows();
  for (const Matrix& m : sequence) {
    require_square(m, "make_time_varying_map");
    if (m.rows() != n) throw DimensionError("make_time_varying_map: mixed matrix dimensions");
  }
  const std::size_t len = sequence.size();
  return make_system("time-varying", n, 0, TimeVaryingMapModel{std::move(sequence)},
                     Vector(n, 1.0), {}, {{"sequence_length", std::to_string(len)}});
}

// ---------------------------------------------------------------------------
// Explicit finite-difference heat and drift-diffusion maps

/// Explicit scheme for u_t = alpha u_xx + beta u_x on [a, b] with n grid
/// intervals and u(a) = u(b) = 0. The state holds the n - 1 interior values.
struct PdeConfig {
  double alpha = 1.0;
  double beta = 0.0;
  double dt = 1e-3;
  std::size_t n = 16;
  double a = 0.0;
  double b = 1.0;
  std::function<double(double)> initial_profile;

  double dx() const { return (b - a) / static_cast<double>(n); }
  double diffusion_number() const { return alpha * dt / (dx() * dx()); }  // r
  double drift_number() const { return beta * dt / dx(); }

  void validate() const {
    if (n < 2) throw DomainError("PdeConfig: n must be at least 2");
    if (!(dt > 0.0)) throw DomainError("PdeConfig: dt must be positive");
    if (!(dx() > 0.0)) throw DomainError("PdeConfig: dx must be positive");
  }

  // Grid with spacing dx on [0, n dx].
  static PdeConfig from_spacing(double alpha, double beta, double dt, double dx, std::size_t n) {
    PdeConfig c;
    c.alpha = alpha;
    c.beta = beta;
    c.dt = dt;
    c.n = n;
    c.a = 0.0;
    c.b = dx * static_cast<double>(n);
    return c;
  }
};

struct DriftDiffusionModel {
  double r = 0.0;  // alpha dt / dx^2
  double c = 0.0;  // beta dt / dx

  template <class T>
  std::vector<T> step(std::span<const T> u, std::span<const T>, StepContext) const {
    const std::size_t m = u.size();
    std::vector<T> out(m);
    for (std::size_t i = 0; i < m; ++i) {
      const T left = i > 0 ? u[i - 1] : T(0.0);
      const T right = i + 1 < m ? u[i + 1] : T(0.0);
      T next = u[i] + r * (right - 2.0 * u[i] + left);
      if (c != 0.0) next = next + c * (right - u[i]);
      out[i] = next;
    }
    return out;
  }

  template <class T>
  T loss(std::span<const T> u, std::span<const T>, StepContext) const {
    return detail::mean_square<T>(u);
  }
};

namespace detail {

inline Vector sample_profile(const PdeConfig& c) {
  const std::size_t m = c.n - 1;
  Vector u(m);
  const double dx = c.dx();
  for (std::size_t i = 0; i < m; ++i) {
    const double x = c.a + static_cast<double>(i + 1) * dx;
    u[i] = c.initial_profile ? c.initial_profile(x)
                             : std::sin(std::numbers::pi * (x - c.a) / (c.b - c.a));
  }
  return u;
}

inline std::map<std::string, std::string> pde_metadata(const PdeConfig& c) {
  return {{"r", std::to_string(c.diffusion_number())},
          {"drift", std::to_string(c.drift_number())},
          {"stability", "1 - 2 alpha dt/dx^2 - beta dt/dx >= 0"}};
}

}  // namespace detail

/// u^{j+1} = A u^j, A tridiagonal with 1 - 2r on the diagonal and r beside it.
inline SystemSpec make_heat_equation(const PdeConfig& config) {
  config.validate();
  if (config.beta != 0.0) throw DomainError("make_heat_equation: beta must be 0");
  return make_system("heat", config.n - 1, 0, DriftDiffusionModel{config.diffusion_number(), 0.0},
                     detail::sample_profile(config), {}, detail::pde_metadata(config));
}

inline SystemSpec make_drift_diffusion(const PdeConfig& config) {
  config.validate();
  return make_system("drift-diffusion", config.n - 1, 0,
                     DriftDiffusionModel{config.diffusion_number(), config.drift_number()},
                     detail::sample_profile(config), {}, detail::pde_metadata(config));
}

// ---------------------------------------------------------------------------
// Sinusoid toy loss

template <class T>
T sinusoid_value(const T& x, double w) {
  using std::sin;
  return 0.1 * sin(x * w / std::numbers::pi) + (x / 10.0) * (x / 10.0) + 0.1;
}

/// One-dimensional parameter; every step copies theta into the state and
/// l_t = l(s_t) for t >= 1 with l_0 = 0, so the mean unrolled loss equals
/// 0.1 sin(theta w / pi) + (theta / 10)^2 + 0.1 for any N.
struct SinusoidModel {
  double w = 1.0;

  template <class T>
  std::vector<T> step(std::span<const T>, std::span<const T> th, StepContext) const {
    return {th[0]};
  }

  template <class T>
  T loss(std::span<const T> s, std::span<const T>, StepContext ctx) const {
    if (ctx.t == 0) return T(0.0);
    return sinusoid_value<T>(s[0], w);
  }
};

inline SystemSpec make_sinusoid_loss(double w) {
  if (!(w > 0.0)) throw DomainError("make_sinusoid_loss: w must be positive");
  return make_system("sinusoid", 1, 1, SinusoidModel{w}, {0.0}, {0.0},
                     {{"w", std::to_string(w)}});
}

// ---------------------------------------------------------------------------
// Double pendulum

struct DoublePendulumParams {
  double m1 = 1.0;
  double m2 = 1.0;
  double l1 = 1.0;
  double l2 = 1.0;
  double g = 9.8;
  double dt = 1e-3;
};

namespace detail {

template <class T>
std::array<T, 4> pendulum_rates(const DoublePendulumParams& p, const std::array<T, 4>& y) {
  using std::cos;
  using std::sin;
  const T& th1 = y[0];
  const T& th2 = y[1];
  const T& w1 = y[2];
  const T& w2 = y[3];
  const T d = th1 - th2;
  const T den = (2.0 * p.m1 + p.m2) - p.m2 * cos(2.0 * d);
  const T a1 = (-p.g * (2.0 * p.m1 + p.m2) * sin(th1) - p.m2 * p.g * sin(th1 - 2.0 * th2) -
                2.0 * sin(d) * p.m2 * (w2 * w2 * p.l2 + w1 * w1 * p.l1 * cos(d))) /
               (p.l1 * den);
  const T a2 = (2.0 * sin(d) *
                (w1 * w1 * p.l1 * (p.m1 + p.m2) + p.g * (p.m1 + p.m2) * cos(th1) +
                 w2 * w2 * p.l2 * p.m2 * cos(d))) /
               (p.l2 * den);
  return {w1, w2, a1, a2};
}

}  // namespace detail

/// State (theta1, theta2, omega1, omega2), one fixed-step RK4 step per
/// transition. The parameters are an offset added to the state entering
/// step 0 (and to s_0 in l_0), so gradients are taken with respect to the
/// initial condition. l_t = theta1^2 + theta2^2.
struct DoublePendulumModel {
  DoublePendulumParams p;

  template <class T>
  std::array<T, 4> offset_state(std::span<const T> s, std::span<const T> th, StepContext ctx) const {
    std::array<T, 4> y{s[0], s[1], s[2], s[3]};
    if (ctx.t == 0) {
      for (std::size_t i = 0; i < 4; ++i) y[i] = y[i] + th[i];
    }
    return y;
  }

  template <class T>
  std::vector<T> step(std::span<const T> s, std::span<const T> th, StepContext ctx) const {
    const std::array<T, 4> y = offset_state(s, th, ctx);
    const double h = p.dt;
    auto shifted = [](const std::array<T, 4>& base, double c, const std::array<T, 4>& k) {
      std::array<T, 4> out;
      for (std::size_t i = 0; i < 4; ++i) out[i] = base[i] + c * k[i];
      return out;
    };
    const auto k1 = detail::pendulum_rates<T>(p, y);
    const auto k2 = detail::pendulum_rates<T>(p, shifted(y, 0.5 * h, k1));
    const auto k3 = detail::pendulum_rates<T>(p, shifted(y, 0.5 * h, k2));
    const auto k4 = detail::pendulum_rates<T>(p, shifted(y, h, k3));
    std::vector<T> out(4);
    for (std::size_t i = 0; i < 4; ++i) {
      out[i] = y[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    return out;
  }

  template <class T>
  T loss(std::span<const T> s, std::span<const T> th, StepContext ctx) const {
    const std::array<T, 4> y = offset_state(s, th, ctx);
    return y[0] * y[0] + y[1] * y[1];
  }
};

inline double double_pendulum_energy(const DoublePendulumParams& p, std::span<const double> s) {
  const double th1 = s[0], th2 = s[1], w1 = s[2], w2 = s[3];
  const double kinetic = 0.5 * (p.m1 + p.m2) * p.l1 * p.l1 * w1 * w1 +
                         0.5 * p.m2 * p.l2 * p.l2 * w2 * w2 +
                         p.m2 * p.l1 * p.l2 * w1 * w2 * std::cos(th1 - th2);
  const double potential =
      -(p.m1 + p.m2) * p.g * p.l1 * std::cos(th1) - p.m2 * p.g * p.l2 * std::cos(th2);
  return kinetic + potential;
}

inline SystemSpec make_double_pendulum(const DoublePendulumParams& p = {},
                                       Vector s0 = {2.0, 2.0, 0.0, 0.0}) {
  if (!(p.m1 > 0.0 && p.m2 > 0.0 && p.l1 > 0.0 && p.l2 > 0.0 && p.dt > 0.0)) {
    throw DomainError("make_double_pendulum: masses, lengths and dt must be positive");
  }
  return make_system("double-pendulum", 4, 4, DoublePendulumModel{p}, std::move(s0),
                     Vector(4, 0.0), {{"dt", std::to_string(p.dt)}});
}

// ---------------------------------------------------------------------------
// Unrolled SGD on a diagonal quadratic

/// Inner problem f(w) = 1/2 sum_i lambda_i w_i^2, one gradient step with
/// learning rate theta[0] per transition: w_i <- (1 - theta lambda_i) w_i.
/// The unroll is unstable iff max_i |1 - theta lambda_i| > 1.
struct SgdUnrollModel {
  Vector lambda;

  template <class T>
  std::vector<T> step(std::span<const T> w, std::span<const T> th, StepContext) const {
    std::vector<T> out(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) out[i] = w[i] - th[0] * (lambda[i] * w[i]);
    return out;
  }

  template <class T>
  T loss(std::span<const T> w, std::span<const T>, StepContext) const {
    T acc(0.0);
    for (std::size_t i = 0; i < w.size(); ++i) acc = acc + lambda[i] * (w[i] * w[i]);
    return 0.5 * acc;
  }
};

inline SystemSpec make_sgd_unroll(Vector lambda) {
  if (lambda.empty()) throw DimensionError("make_sgd_unroll: empty spectrum");
  double lmax = 0.0;
  for (double l : lambda) {
    if (!(l > 0.0)) throw DomainError("make_sgd_unroll: eigenvalues must be positive");
    lmax = std::max(lmax, l);
  }
  const std::size_t d = lambda.size();
  return make_system("sgd-unroll", d, 1, SgdUnrollModel{std::move(lambda)}, Vector(d, 1.0),
                     {0.5 / lmax},
                     {{"stable_learning_rate_below", std::to_string(2.0 / lmax)}});
}

// ---------------------------------------------------------------------------
// Logistic map (reference chaotic system for Lyapunov checks)

/// x <- r x (1 - x) with r = theta[0]; l_t = x_t^2.
struct LogisticModel {
  template <class T>
  std::vector<T> step(std::span<const T> x, std::span<const T> th, StepContext) const {
    return {th[0] * x[0] * (1.0 - x[0])};
  }

  template <class T>
  T loss(std::span<const T> x, std::span<const T>, StepContext) const {
    return x[0] * x[0];
  }
};

inline SystemSpec make_logistic_map(double r = 4.0, double x0 = 0.3) {
  return make_system("logistic", 1, 1, LogisticModel{}, {x0}, {r});
}

}  // namespace chaosgrad::systems
