#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "chaosgrad/autodiff/dual.hpp"
#include "chaosgrad/autodiff/tape.hpp"
#include "chaosgrad/core/error.hpp"
#include "chaosgrad/core/linalg.hpp"
#include "chaosgrad/core/rng.hpp"
#include "chaosgrad/systems/system.hpp"
#include "chaosgrad/systems/unroll.hpp"

// Gradient estimators over unrolled systems. Every estimator targets the mean
// unrolled loss L(theta) = (1/N) sum_{t=0..N} l_t(s_t, theta).

namespace chaosgrad::estimators {

using systems::StepContext;
using systems::SystemSpec;
using systems::Trajectory;

/// Backpropagation produced a non-finite gradient. `step()` is the first
/// unroll step at which a state, loss or forward sensitivity exceeded
/// kBlowupMagnitude (or left the finite range).
class GradientBlowupError : public NonFiniteError {
 public:
  GradientBlowupError(std::size_t step, const std::string& detail)
      : NonFiniteError("gradient blew up at step " + std::to_string(step) + ": " + detail, step) {}
};

inline constexpr double kBlowupMagnitude = 1e100;

struct TruncationConfig {
  std::size_t length = 1;

  void validate(std::size_t horizon) const {
    if (length < 1 || length > horizon) {
      throw DomainError("truncation length must lie in [1, N]; got " + std::to_string(length) +
                        " with N = " + std::to_string(horizon));
    }
  }
};

enum class ClipMode { GlobalNorm, PerCoordinate };

struct ClipConfig {
  ClipMode mode = ClipMode::GlobalNorm;
  double threshold = 1.0;
};

struct SmoothingConfig {
  double sigma = 0.3;
  std::size_t num_samples = 10000;
  bool antithetic = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(sigma >= 0.0)) throw DomainError("smoothing sigma must be non-negative");
    if (num_samples < 1) throw DomainError("smoothing needs at least one sample");
    if (antithetic && num_samples % 2 != 0) {
      throw DomainError("antithetic sampling needs an even sample count");
    }
  }
};

/// Per-sample gradients plus their summary. Non-finite samples stay in
/// `samples` (flagged in `finite`) but are left out of mean and variance;
/// `excluded` counts them.
struct GradientEstimate {
  std::vector<Vector> samples;
  std::vector<bool> finite;
  Vector mean;
  Vector variance;  // unbiased, per coordinate
  double max_variance = 0.0;
  std::size_t excluded = 0;

  std::size_t included() const noexcept { return samples.size() - excluded; }
};

namespace detail {

enum class Wrt { Parameters, InitialState };

// Shifted mean: exact when every value is identical.
inline double stable_mean(std::span<const double> xs) {
  if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double x0 = xs[0];
  double acc = 0.0;
  for (double x : xs) acc += x - x0;
  return x0 + acc / static_cast<double>(xs.size());
}

inline GradientEstimate summarize(std::vector<Vector> samples, std::size_t dim) {
  GradientEstimate est;
  est.finite.resize(samples.size());
  std::vector<std::size_t> keep;
  for (std::size_t j = 0; j < samples.size(); ++j) {
    est.finite[j] = all_finite(samples[j]);
    if (est.finite[j]) keep.push_back(j);
  }
  est.excluded = samples.size() - keep.size();
  est.mean.assign(dim, std::numeric_limits<double>::quiet_NaN());
  est.variance.assign(dim, std::numeric_limits<double>::quiet_NaN());
  est.max_variance = dim == 0 ? 0.0 : std::numeric_limits<double>::quiet_NaN();
  if (!keep.empty()) {
    std::vector<double> column(keep.size());
    double vmax = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      for (std::size_t r = 0; r < keep.size(); ++r) column[r] = samples[keep[r]][i];
      const double m = stable_mean(column);
      double ss = 0.0;
      for (double x : column) ss += (x - m) * (x - m);
      const double v = keep.size() > 1 ? ss / static_cast<double>(keep.size() - 1) : 0.0;
      est.mean[i] = m;
      est.variance[i] = v;
      vmax = std::max(vmax, v);
    }
    est.max_variance = dim == 0 ? 0.0 : vmax;
  }
  est.samples = std::move(samples);
  return est;
}

// Forward-mode scan for the first step whose state, loss sum or sensitivity
// exceeds kBlowupMagnitude. One dual pass per differentiated coordinate.
inline std::size_t locate_blowup(const SystemSpec& sys, std::span<const double> theta,
                                 std::span<const double> s0, std::size_t steps, Wrt wrt,
                                 std::size_t truncation) {
  const std::size_t dims = wrt == Wrt::Parameters ? theta.size() : s0.size();
  std::size_t first = steps;
  auto too_big = [](const ad::Dual& d) {
    return !std::isfinite(d.value) || !std::isfinite(d.tangent) ||
           std::abs(d.value) > kBlowupMagnitude || std::abs(d.tangent) > kBlowupMagnitude;
  };
  for (std::size_t j = 0; j < std::max<std::size_t>(dims, 1); ++j) {
    std::vector<ad::Dual> th(theta.size()), s(s0.size());
    for (std::size_t i = 0; i < theta.size(); ++i) th[i] = ad::Dual(theta[i]);
    for (std::size_t i = 0; i < s0.size(); ++i) s[i] = ad::Dual(s0[i]);
    if (dims > 0) {
      (wrt == Wrt::Parameters ? th : s)[j].tangent = 1.0;
    }
    ad::Dual acc = sys.loss<ad::Dual>(s, th, {0, steps});
    if (too_big(acc)) return 0;
    for (std::size_t t = 0; t < steps && t < first; ++t) {
      auto next = sys.step<ad::Dual>(s, th, {t, steps});
      acc = acc + sys.loss<ad::Dual>(next, th, {t + 1, steps});
      bool bad = too_big(acc);
      for (const auto& x : next) bad = bad || too_big(x);
      if (bad) {
        first = std::min(first, t + 1);
        break;
      }
      if (truncation != 0 && (t + 1) % truncation == 0) {
        for (auto& x : next) x.tangent = 0.0;
      }
      s = std::move(next);
    }
  }
  return first;
}

/// Reverse sweep through the whole unroll. With truncation = t > 0, the
/// state entering every step that follows a multiple of t is cut from the
/// backward graph; the forward values are untouched.
inline Vector tape_unroll_gradient(const SystemSpec& sys, std::span<const double> theta,
                                   std::span<const double> s0, std::size_t steps, Wrt wrt,
                                   std::size_t truncation) {
  sys.check_dims(theta, s0);
  if (steps == 0) throw DomainError("gradient: need at least one step");
  const std::size_t dims = wrt == Wrt::Parameters ? theta.size() : s0.size();
  if (dims == 0) return {};

  auto fail = [&](const std::string& why) -> GradientBlowupError {
    return GradientBlowupError(locate_blowup(sys, theta, s0, steps, wrt, truncation), why);
  };

  Vector grad;
  try {
    ad::Tape tape;
    std::vector<ad::Var> th(theta.size()), s(s0.size());
    for (std::size_t i = 0; i < theta.size(); ++i) {
      th[i] = wrt == Wrt::Parameters ? tape.input(theta[i]) : ad::Var(theta[i]);
    }
    for (std::size_t i = 0; i < s0.size(); ++i) {
      s[i] = wrt == Wrt::InitialState ? tape.input(s0[i]) : ad::Var(s0[i]);
    }
    ad::Var acc = sys.loss<ad::Var>(s, th, {0, steps});
    for (std::size_t t = 0; t < steps; ++t) {
      std::vector<ad::Var> next = sys.step<ad::Var>(s, th, {t, steps});
      acc = acc + sys.loss<ad::Var>(next, th, {t + 1, steps});
      if (truncation != 0 && (t + 1) % truncation == 0 && t + 1 < steps) {
        for (auto& x : next) {
          if (x.active()) x = tape.stop_gradient(x);
        }
      }
      s = std::move(next);
    }
    const ad::Var mean = tape.lift(acc / static_cast<double>(steps));
    grad = tape.gradient(mean.index());
  } catch (const NonFiniteError& e) {
    throw fail(e.what());
  }
  if (!all_finite(grad)) throw fail("non-finite adjoint");
  return grad;
}

inline Vector perturbation(const SmoothingConfig& c, std::size_t sample, std::size_t dim) {
  const std::size_t stream = c.antithetic ? sample / 2 : sample;
  const double sign = c.antithetic && sample % 2 == 1 ? -1.0 : 1.0;
  const CounterRng rng(c.seed, stream);
  Vector eps(dim);
  for (std::size_t i = 0; i < dim; ++i) eps[i] = sign * rng.normal_at(i);
  return eps;
}

}  // namespace detail

/// dL/dtheta by one reverse sweep through the full unroll.
inline Vector full_gradient(const SystemSpec& sys, std::span<const double> theta,
                            std::span<const double> s0, std::size_t steps) {
  return detail::tape_unroll_gradient(sys, theta, s0, steps, detail::Wrt::Parameters, 0);
}

/// dL/ds_0 by one reverse sweep through the full unroll.
inline Vector initial_state_gradient(const SystemSpec& sys, std::span<const double> theta,
                                     std::span<const double> s0, std::size_t steps) {
  return detail::tape_unroll_gradient(sys, theta, s0, steps, detail::Wrt::InitialState, 0);
}

/// Literal product-sum assembly of dL/dtheta from the stored per-step factors:
///
///   (1/N) sum_{t=0..N} [ dl_t/dtheta
///       + sum_{k=1..t} dl_t/ds_t (J_t J_{t-1} ... J_{k+1}) ds_k/dtheta ]
///
/// with J_i = ds_i/ds_{i-1}; the k = t term carries the empty product.
inline Vector eq8_assembled_gradient(const Trajectory& traj) {
  if (!traj.has_jacobians()) {
    throw Error("eq8_assembled_gradient: trajectory was unrolled without Jacobians");
  }
  const std::size_t n_steps = traj.steps();
  Vector g(traj.theta.size(), 0.0);
  for (std::size_t t = 0; t <= n_steps; ++t) {
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += traj.loss_param_grads[t][i];
    Vector row = traj.loss_state_grads[t];
    for (std::size_t k = t; k >= 1; --k) {
      const Vector term = left_multiply(row, traj.param_jacobians[k - 1]);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += term[i];
      if (k > 1) row = left_multiply(row, traj.state_jacobians[k - 1]);
    }
  }
  for (double& x : g) x /= static_cast<double>(n_steps);
  return g;
}

/// Gradient of L with the state-to-state backward flow severed every
/// `config.length` steps. length = N reproduces full_gradient exactly.
inline Vector truncated_gradient(const SystemSpec& sys, std::span<const double> theta,
                                 std::span<const double> s0, std::size_t steps,
                                 const TruncationConfig& config) {
  config.validate(steps);
  return detail::tape_unroll_gradient(sys, theta, s0, steps, detail::Wrt::Parameters,
                                      config.length == steps ? 0 : config.length);
}

inline Vector clip_gradient(std::span<const double> g, const ClipConfig& config) {
  if (!(config.threshold > 0.0)) throw DomainError("clip threshold must be positive");
  if (!all_finite(g)) throw NonFiniteError("clip_gradient: non-finite input");
  Vector out(g.begin(), g.end());
  if (config.mode == ClipMode::GlobalNorm) {
    const double n = norm2(g);
    if (n > config.threshold) {
      double s = config.threshold / n;
      for (double& x : out) x *= s;
      // Rounding can leave the norm an ulp above the threshold.
      while (norm2(out) > config.threshold) {
        s = std::nextafter(1.0, 0.0);
        for (double& x : out) x *= s;
      }
    }
  } else {
    for (double& x : out) x = std::clamp(x, -config.threshold, config.threshold);
  }
  return out;
}

/// Reparameterization estimate of grad E[L(theta + sigma eps)]: sample j is
/// the backpropagated gradient at theta + sigma eps_j. With `antithetic`,
/// samples 2m and 2m+1 use +eps_m and -eps_m.
inline GradientEstimate reparam_smoothed_gradient(const SystemSpec& sys,
                                                  std::span<const double> theta,
                                                  std::span<const double> s0, std::size_t steps,
                                                  const SmoothingConfig& config) {
  config.validate();
  sys.check_dims(theta, s0);
  const std::size_t p = theta.size();
  std::vector<Vector> samples(config.num_samples);
  for (std::size_t j = 0; j < config.num_samples; ++j) {
    const Vector th = axpy(theta, config.sigma, detail::perturbation(config, j, p));
    try {
      samples[j] = full_gradient(sys, th, s0, steps);
    } catch (const NonFiniteError&) {
      samples[j].assign(p, std::numeric_limits<double>::infinity());
    }
  }
  return detail::summarize(std::move(samples), p);
}

/// Black-box (evolution strategies) estimate of the same smoothed gradient
/// from loss values only. Antithetic: one sample per pair,
/// (L(theta + sigma eps) - L(theta - sigma eps)) / (2 sigma) * eps.
/// Unpaired: (L(theta + sigma eps) - L(theta)) / sigma * eps per draw.
inline GradientEstimate blackbox_es_gradient(const SystemSpec& sys, std::span<const double> theta,
                                             std::span<const double> s0, std::size_t steps,
                                             const SmoothingConfig& config) {
  config.validate();
  if (!(config.sigma > 0.0)) throw DomainError("blackbox_es_gradient: sigma must be positive");
  sys.check_dims(theta, s0);
  const std::size_t p = theta.size();
  auto loss_at = [&](const Vector& th) { return systems::mean_unrolled_loss(sys, th, s0, steps); };
  std::vector<Vector> samples;
  if (config.antithetic) {
    samples.resize(config.num_samples / 2);
    for (std::size_t m = 0; m < samples.size(); ++m) {
      const Vector eps = detail::perturbation(config, 2 * m, p);
      const double lp = loss_at(axpy(theta, config.sigma, eps));
      const double lm = loss_at(axpy(theta, -config.sigma, eps));
      samples[m] = scale((lp - lm) / (2.0 * config.sigma), eps);
    }
  } else {
    samples.resize(config.num_samples);
    const double base = loss_at(Vector(theta.begin(), theta.end()));
    for (std::size_t j = 0; j < samples.size(); ++j) {
      const Vector eps = detail::perturbation(config, j, p);
      const double lp = loss_at(axpy(theta, config.sigma, eps));
      samples[j] = scale((lp - base) / config.sigma, eps);
    }
  }
  for (Vector& s : samples) {
    if (!all_finite(s)) s.assign(p, std::numeric_limits<double>::infinity());
  }
  return detail::summarize(std::move(samples), p);
}

struct SmoothedLoss {
  double mean = 0.0;
  Vector per_sample;
  std::size_t excluded = 0;
};

/// Monte Carlo E[L(theta + sigma eps)], drawing the same perturbations as
/// reparam_smoothed_gradient for the same config.
inline SmoothedLoss smoothed_loss_estimate(const SystemSpec& sys, std::span<const double> theta,
                                           std::span<const double> s0, std::size_t steps,
                                           const SmoothingConfig& config) {
  config.validate();
  sys.check_dims(theta, s0);
  SmoothedLoss out;
  out.per_sample.resize(config.num_samples);
  Vector finite;
  finite.reserve(config.num_samples);
  for (std::size_t j = 0; j < config.num_samples; ++j) {
    const Vector th = axpy(theta, config.sigma, detail::perturbation(config, j, theta.size()));
    const double l = systems::mean_unrolled_loss(sys, th, s0, steps);
    out.per_sample[j] = l;
    if (std::isfinite(l)) finite.push_back(l);
  }
  out.excluded = config.num_samples - finite.size();
  out.mean = detail::stable_mean(finite);
  return out;
}

// ---------------------------------------------------------------------------
// Estimator selection and variance sweeps

enum class Method { Full, Eq8, Truncated, Clipped, Reparam, Es };

inline std::string_view method_name(Method m) {
  switch (m) {
    case Method::Full: return "full";
    case Method::Eq8: return "eq8";
    case Method::Truncated: return "truncated";
    case Method::Clipped: return "clipped";
    case Method::Reparam: return "reparam";
    case Method::Es: return "es";
  }
  return "?";
}

inline std::optional<Method> parse_method(std::string_view s) {
  for (Method m : {Method::Full, Method::Eq8, Method::Truncated, Method::Clipped, Method::Reparam,
                   Method::Es}) {
    if (method_name(m) == s) return m;
  }
  return std::nullopt;
}

struct EstimatorChoice {
  Method method = Method::Full;
  SmoothingConfig smoothing;
  TruncationConfig truncation;
  ClipConfig clip;
};

/// One gradient estimate with the chosen method. The deterministic methods
/// yield a single sample; the seed only matters for reparam and es.
inline GradientEstimate estimate_gradient(const SystemSpec& sys, std::span<const double> theta,
                                          std::span<const double> s0, std::size_t steps,
                                          const EstimatorChoice& choice) {
  const std::size_t p = theta.size();
  auto single = [&](auto&& compute) {
    std::vector<Vector> one(1);
    try {
      one[0] = compute();
    } catch (const NonFiniteError&) {
      one[0].assign(p, std::numeric_limits<double>::infinity());
    }
    return detail::summarize(std::move(one), p);
  };
  switch (choice.method) {
    case Method::Full:
      return single([&] { return full_gradient(sys, theta, s0, steps); });
    case Method::Eq8:
      return single(
          [&] { return eq8_assembled_gradient(systems::unroll(sys, theta, s0, steps, true)); });
    case Method::Truncated:
      return single([&] { return truncated_gradient(sys, theta, s0, steps, choice.truncation); });
    case Method::Clipped:
      return single([&] { return clip_gradient(full_gradient(sys, theta, s0, steps), choice.clip); });
    case Method::Reparam:
      return reparam_smoothed_gradient(sys, theta, s0, steps, choice.smoothing);
    case Method::Es:
      return blackbox_es_gradient(sys, theta, s0, steps, choice.smoothing);
  }
  throw Error("unknown estimator");
}

struct VarianceCell {
  Vector theta;
  std::size_t steps = 0;
  double max_variance = 0.0;
  double mean_norm = 0.0;
  std::size_t excluded = 0;  // seeds whose estimate was non-finite
};

/// For every (theta, N) cell, runs the estimator once per seed
/// (seed i uses derive_seed(base_seed, i)) and reports the max over
/// coordinates of the across-seed variance of the estimate, plus the norm
/// of the across-seed mean.
inline std::vector<VarianceCell> gradient_variance_sweep(
    const SystemSpec& sys, const std::vector<Vector>& theta_list, std::span<const double> s0,
    const std::vector<std::size_t>& step_list, const EstimatorChoice& choice, std::size_t seeds,
    std::uint64_t base_seed = 0) {
  if (theta_list.empty() || step_list.empty() || seeds == 0) {
    throw DomainError("gradient_variance_sweep: empty sweep");
  }
  std::vector<VarianceCell> cells;
  for (const Vector& theta : theta_list) {
    for (std::size_t steps : step_list) {
      std::vector<Vector> per_seed(seeds);
      for (std::size_t i = 0; i < seeds; ++i) {
        EstimatorChoice c = choice;
        c.smoothing.seed = derive_seed(base_seed, i);
        per_seed[i] = estimate_gradient(sys, theta, s0, steps, c).mean;
      }
      const GradientEstimate across = detail::summarize(std::move(per_seed), theta.size());
      VarianceCell cell;
      cell.theta = theta;
      cell.steps = steps;
      cell.max_variance = across.max_variance;
      cell.mean_norm = norm2(across.mean);
      cell.excluded = across.excluded;
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

}  // namespace chaosgrad::estimators
