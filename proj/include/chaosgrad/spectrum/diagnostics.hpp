#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "chaosgrad/core/error.hpp"
#include "chaosgrad/core/linalg.hpp"
#include "chaosgrad/estimators.hpp"
#include "chaosgrad/spectrum/eigen.hpp"
#include "chaosgrad/systems/system.hpp"
#include "chaosgrad/systems/unroll.hpp"
#include "chaosgrad/systems/zoo.hpp"

namespace chaosgrad::spectrum {

using systems::StepContext;
using systems::SystemSpec;
using systems::Trajectory;

/// Recurrent-Jacobian statistics along one trajectory. Index i of the
/// per-step lists refers to ds_{i+1}/ds_i; index t of
/// cumulative_log_max_modulus refers to the product over the first t+1 steps.
struct SpectrumReport {
  std::vector<std::vector<Complex>> per_step_eigenvalues;
  std::vector<double> per_step_max_modulus;
  std::vector<double> cumulative_log_max_modulus;
  std::optional<std::vector<double>> gradient_norms;
};

struct GerschgorinDisk {
  Complex center;
  double radius = 0.0;

  bool contains(Complex z, double tol = 1e-9) const { return std::abs(z - center) <= radius + tol; }
};

struct LyapunovCheckpoint {
  std::size_t step = 0;
  Vector exponents;  // running estimates, descending
};

struct LyapunovResult {
  Vector exponents;  // per step, descending
  std::size_t steps_used = 0;
  std::vector<LyapunovCheckpoint> convergence_trace;
};

struct PdeStability {
  double criterion_value = 0.0;  // 1 - 2 r - c
  bool paper_criterion_satisfied = false;
  double spectral_radius = 0.0;
  bool stable = false;
};

struct GradientNormCurve {
  std::vector<double> norms;  // norms[N-1] = |dL/dtheta| for unroll length N
  std::optional<std::size_t> first_nonfinite;
};

namespace detail {

inline const std::vector<Matrix>& state_jacobians(const Trajectory& traj, const char* what) {
  if (!traj.has_jacobians()) {
    throw Error(std::string(what) + ": trajectory was unrolled without Jacobians");
  }
  return traj.state_jacobians;
}

// Sort indices by value descending; equal values keep index order.
inline std::vector<std::size_t> descending_order(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
  return idx;
}

inline Vector sorted_descending(std::span<const double> v) {
  Vector out;
  out.reserve(v.size());
  for (std::size_t i : descending_order(v)) out.push_back(v[i]);
  return out;
}

}  // namespace detail

inline SpectrumReport per_step_spectra(const Trajectory& traj) {
  SpectrumReport rep;
  for (const Matrix& j : detail::state_jacobians(traj, "per_step_spectra")) {
    auto ev = eigenvalues(j);
    rep.per_step_max_modulus.push_back(spectral_radius(ev));
    rep.per_step_eigenvalues.push_back(std::move(ev));
  }
  return rep;
}

/// log |lambda_max(J_t ... J_1)| for every t, carried as a rescaled product
/// plus an accumulated log factor.
inline std::vector<double> cumulative_log_max_modulus(const std::vector<Matrix>& jacobians) {
  std::vector<double> out;
  if (jacobians.empty()) return out;
  const std::size_t n = jacobians.front().rows();
  Matrix p = Matrix::identity(n);
  double log_scale = 0.0;
  out.reserve(jacobians.size());
  for (std::size_t t = 0; t < jacobians.size(); ++t) {
    p = jacobians[t] * p;
    const double m = max_abs(p);
    if (!(m > 0.0) || !std::isfinite(m)) {
      throw NonFiniteError("cumulative product collapsed at step " + std::to_string(t + 1), t + 1);
    }
    p = (1.0 / m) * p;
    log_scale += std::log(m);
    const double rho = spectral_radius(p);
    if (!(rho > std::numeric_limits<double>::epsilon())) {
      throw NonFiniteError("cumulative product lost rank at step " + std::to_string(t + 1), t + 1);
    }
    out.push_back(log_scale + std::log(rho));
  }
  return out;
}

inline SpectrumReport cumulative_product_growth(const Trajectory& traj) {
  SpectrumReport rep;
  rep.cumulative_log_max_modulus =
      cumulative_log_max_modulus(detail::state_jacobians(traj, "cumulative_product_growth"));
  return rep;
}

inline std::vector<GerschgorinDisk> gerschgorin_disks(const Matrix& m) {
  require_square(m, "gerschgorin_disks");
  std::vector<GerschgorinDisk> disks(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double r = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (j != i) r += std::abs(m(i, j));
    }
    disks[i] = {Complex(m(i, i), 0.0), r};
  }
  return disks;
}

inline bool in_some_disk(const std::vector<GerschgorinDisk>& disks, Complex z, double tol = 1e-9) {
  return std::any_of(disks.begin(), disks.end(), [&](const auto& d) { return d.contains(z, tol); });
}

/// Benettin estimate of the k leading Lyapunov exponents, in units of
/// log-growth per step. Tangent vectors start as the first k unit vectors and
/// are re-orthonormalized (modified Gram-Schmidt) after every step.
inline LyapunovResult lyapunov_exponents(const SystemSpec& sys, std::span<const double> theta,
                                         std::span<const double> s0, std::size_t steps,
                                         std::size_t k, std::size_t checkpoints = 10) {
  sys.check_dims(theta, s0);
  if (k < 1 || k > sys.state_dim) {
    throw DomainError("lyapunov_exponents: need 1 <= k <= state_dim");
  }
  if (steps == 0) throw DomainError("lyapunov_exponents: need at least one step");
  const std::size_t n = sys.state_dim;
  std::vector<Vector> q(k, Vector(n, 0.0));
  for (std::size_t j = 0; j < k; ++j) q[j][j] = 1.0;
  Vector s(s0.begin(), s0.end());
  Vector log_sum(k, 0.0);
  LyapunovResult res;
  const std::size_t every = std::max<std::size_t>(1, steps / std::max<std::size_t>(checkpoints, 1));

  for (std::size_t t = 0; t < steps; ++t) {
    const StepContext ctx{t, steps};
    for (std::size_t j = 0; j < k; ++j) q[j] = systems::step_state_jvp(sys, theta, s, q[j], ctx);
    s = sys.step<double>(s, theta, ctx);
    if (!all_finite(s)) throw NonFiniteError("lyapunov_exponents: non-finite state", t + 1);
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t i = 0; i < j; ++i) {
        const double proj = dot(q[i], q[j]);
        for (std::size_t c = 0; c < n; ++c) q[j][c] -= proj * q[i][c];
      }
      const double r = norm2(q[j]);
      if (!(r > 0.0) || !std::isfinite(r)) {
        throw NonFiniteError("lyapunov_exponents: degenerate tangent vector", t + 1);
      }
      for (double& x : q[j]) x /= r;
      log_sum[j] += std::log(r);
    }
    if ((t + 1) % every == 0 || t + 1 == steps) {
      Vector running(k);
      for (std::size_t j = 0; j < k; ++j) running[j] = log_sum[j] / static_cast<double>(t + 1);
      res.convergence_trace.push_back({t + 1, detail::sorted_descending(running)});
    }
  }
  for (double& x : log_sum) x /= static_cast<double>(steps);
  res.exponents = detail::sorted_descending(log_sum);
  res.steps_used = steps;
  return res;
}

/// One-step matrix of the explicit drift-diffusion scheme on the interior
/// grid points.
inline Matrix pde_step_matrix(const systems::PdeConfig& config) {
  const SystemSpec sys = systems::make_drift_diffusion(config);
  return systems::step_state_jacobian(sys, {}, sys.default_s0, {0, 1});
}

inline PdeStability pde_stability_check(const systems::PdeConfig& config) {
  config.validate();
  PdeStability out;
  out.criterion_value = 1.0 - 2.0 * config.diffusion_number() - config.drift_number();
  out.paper_criterion_satisfied = out.criterion_value >= 0.0;
  out.spectral_radius = spectral_radius(pde_step_matrix(config));
  out.stable = out.spectral_radius <= 1.0 + 1e-12;
  return out;
}

inline constexpr double kMaxConditionNumber = 1e12;

/// Mean squared entrywise deviation of X_i^{-1} X_next from the identity.
inline double slowly_varying_mse(const Matrix& x_i, const Matrix& x_next) {
  require_square(x_i, "slowly_varying_mse");
  require_square(x_next, "slowly_varying_mse");
  if (x_i.rows() != x_next.rows()) throw DimensionError("slowly_varying_mse: size mismatch");
  const auto lu = lu_decompose(x_i);
  if (lu.singular) throw DomainError("slowly_varying_mse: X_i is singular");
  const Matrix inv = inverse(lu);
  const double cond = norm1(x_i) * norm1(inv);
  if (!(cond < kMaxConditionNumber)) {
    throw DomainError("slowly_varying_mse: X_i is numerically singular (condition number " +
                      std::to_string(cond) + ")");
  }
  const Matrix d = inv * (x_next - x_i);
  double acc = 0.0;
  for (double v : d.data()) acc += v * v;
  return acc / static_cast<double>(d.rows() * d.cols());
}

/// |full_gradient| for N = 1..n_max. From the first non-finite N onward the
/// entries are +inf.
inline GradientNormCurve gradient_norm_curve(const SystemSpec& sys, std::span<const double> theta,
                                             std::span<const double> s0, std::size_t n_max) {
  if (sys.param_dim == 0) throw DimensionError("gradient_norm_curve: system has no parameters");
  if (n_max == 0) throw DomainError("gradient_norm_curve: n_max must be positive");
  GradientNormCurve curve;
  curve.norms.assign(n_max, std::numeric_limits<double>::infinity());
  for (std::size_t n = 1; n <= n_max; ++n) {
    double g = std::numeric_limits<double>::infinity();
    try {
      g = norm2(estimators::full_gradient(sys, theta, s0, n));
    } catch (const NonFiniteError&) {
    }
    if (!std::isfinite(g)) {
      curve.first_nonfinite = n;
      break;
    }
    curve.norms[n - 1] = g;
  }
  return curve;
}

/// Least-squares slope of y against its index after dropping the leading
/// `drop_fraction` of points.
inline double least_squares_slope(std::span<const double> y, double drop_fraction = 0.1) {
  const std::size_t start = static_cast<std::size_t>(drop_fraction * static_cast<double>(y.size()));
  const std::size_t m = y.size() - std::min(start, y.size());
  if (m < 2) throw DomainError("least_squares_slope: need at least two points after the transient");
  double sx = 0.0, sy = 0.0;
  for (std::size_t i = start; i < y.size(); ++i) {
    sx += static_cast<double>(i);
    sy += y[i];
  }
  const double mx = sx / static_cast<double>(m);
  const double my = sy / static_cast<double>(m);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = start; i < y.size(); ++i) {
    const double dx = static_cast<double>(i) - mx;
    sxy += dx * (y[i] - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

}  // namespace chaosgrad::spectrum
