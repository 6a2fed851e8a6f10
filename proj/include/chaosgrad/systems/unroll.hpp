#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "chaosgrad/autodiff/dual.hpp"
#include "chaosgrad/core/error.hpp"
#include "chaosgrad/core/linalg.hpp"
#include "chaosgrad/systems/system.hpp"

namespace chaosgrad::systems {

/// Everything product-sum gradient assembly needs from one unroll.
///
/// states[t] = s_t for t = 0..N and step_losses[t] = l_t(s_t). The Jacobian
/// families are filled only when requested: state_jacobians[i-1] holds
/// ds_i/ds_{i-1} and param_jacobians[i-1] holds ds_i/dtheta with s_{i-1} fixed,
/// for i = 1..N; loss_state_grads[t] and loss_param_grads[t] hold the partials
/// of l_t for t = 0..N.
struct Trajectory {
  Vector theta;
  std::vector<Vector> states;
  Vector step_losses;
  std::vector<Matrix> state_jacobians;
  std::vector<Matrix> param_jacobians;
  std::vector<Vector> loss_state_grads;
  std::vector<Vector> loss_param_grads;

  std::size_t steps() const noexcept { return states.empty() ? 0 : states.size() - 1; }
  bool has_jacobians() const noexcept {
    return !states.empty() && state_jacobians.size() == steps() &&
           loss_state_grads.size() == states.size();
  }

  // (1/N) sum_{t=0..N} l_t
  double mean_loss() const {
    double acc = 0.0;
    for (double l : step_losses) acc += l;
    return acc / static_cast<double>(steps());
  }
};

/// Thrown when the unroll leaves the finite range. Carries the step index of
/// the first non-finite state and everything computed before it.
class UnrollError : public NonFiniteError {
 public:
  UnrollError(std::size_t step, Trajectory partial)
      : NonFiniteError("unroll: non-finite state at step " + std::to_string(step), step),
        partial_(std::move(partial)) {}

  const Trajectory& partial() const noexcept { return partial_; }

 private:
  Trajectory partial_;
};

namespace detail {

inline std::vector<ad::Dual> constant_duals(std::span<const double> v) {
  std::vector<ad::Dual> d(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) d[i] = ad::Dual(v[i]);
  return d;
}

}  // namespace detail

/// ds'/ds at (s, theta) for step t, by forward mode.
inline Matrix step_state_jacobian(const SystemSpec& sys, std::span<const double> theta,
                                  std::span<const double> s, StepContext ctx) {
  auto sd = detail::constant_duals(s);
  const auto td = detail::constant_duals(theta);
  Matrix jac(sys.state_dim, s.size());
  for (std::size_t j = 0; j < s.size(); ++j) {
    sd[j].tangent = 1.0;
    const auto out = sys.step<ad::Dual>(sd, td, ctx);
    sd[j].tangent = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) jac(i, j) = out[i].tangent;
  }
  return jac;
}

/// ds'/dtheta at (s, theta) for step t, by forward mode.
inline Matrix step_param_jacobian(const SystemSpec& sys, std::span<const double> theta,
                                  std::span<const double> s, StepContext ctx) {
  const auto sd = detail::constant_duals(s);
  auto td = detail::constant_duals(theta);
  Matrix jac(sys.state_dim, theta.size());
  for (std::size_t j = 0; j < theta.size(); ++j) {
    td[j].tangent = 1.0;
    const auto out = sys.step<ad::Dual>(sd, td, ctx);
    td[j].tangent = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) jac(i, j) = out[i].tangent;
  }
  return jac;
}

/// Tangent of the step along direction v in state space.
inline Vector step_state_jvp(const SystemSpec& sys, std::span<const double> theta,
                             std::span<const double> s, std::span<const double> v,
                             StepContext ctx) {
  std::vector<ad::Dual> sd(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) sd[i] = ad::Dual(s[i], v[i]);
  const auto td = detail::constant_duals(theta);
  const auto out = sys.step<ad::Dual>(sd, td, ctx);
  Vector jv(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) jv[i] = out[i].tangent;
  return jv;
}

inline void loss_partials(const SystemSpec& sys, std::span<const double> theta,
                          std::span<const double> s, StepContext ctx, Vector& d_state,
                          Vector& d_param) {
  auto sd = detail::constant_duals(s);
  auto td = detail::constant_duals(theta);
  d_state.assign(s.size(), 0.0);
  d_param.assign(theta.size(), 0.0);
  for (std::size_t j = 0; j < s.size(); ++j) {
    sd[j].tangent = 1.0;
    d_state[j] = sys.loss<ad::Dual>(sd, td, ctx).tangent;
    sd[j].tangent = 0.0;
  }
  for (std::size_t j = 0; j < theta.size(); ++j) {
    td[j].tangent = 1.0;
    d_param[j] = sys.loss<ad::Dual>(sd, td, ctx).tangent;
    td[j].tangent = 0.0;
  }
}

/// Runs s_{t+1} = f(s_t, theta) for N steps and records the trajectory.
inline Trajectory unroll(const SystemSpec& sys, std::span<const double> theta,
                         std::span<const double> s0, std::size_t steps,
                         bool collect_jacobians = false) {
  sys.check_dims(theta, s0);
  if (steps == 0) throw DomainError("unroll: need at least one step");
  Trajectory traj;
  traj.theta.assign(theta.begin(), theta.end());
  traj.states.reserve(steps + 1);
  traj.states.emplace_back(s0.begin(), s0.end());

  auto record_loss = [&](std::size_t t) {
    const StepContext ctx{t, steps};
    const Vector& s = traj.states[t];
    const double l = sys.loss<double>(s, theta, ctx);
    Vector ds, dp;
    if (collect_jacobians) loss_partials(sys, theta, s, ctx, ds, dp);
    if (!std::isfinite(l) || !all_finite(ds) || !all_finite(dp)) {
      throw UnrollError(t, std::move(traj));
    }
    traj.step_losses.push_back(l);
    if (collect_jacobians) {
      traj.loss_state_grads.push_back(std::move(ds));
      traj.loss_param_grads.push_back(std::move(dp));
    }
  };

  if (!all_finite(s0)) throw UnrollError(0, Trajectory{traj.theta, {}, {}, {}, {}, {}, {}});
  record_loss(0);
  for (std::size_t t = 0; t < steps; ++t) {
    const StepContext ctx{t, steps};
    const Vector& s = traj.states[t];
    Vector next = sys.step<double>(s, theta, ctx);
    if (!all_finite(next)) throw UnrollError(t + 1, std::move(traj));
    if (collect_jacobians) {
      Matrix js = step_state_jacobian(sys, theta, s, ctx);
      Matrix jp = step_param_jacobian(sys, theta, s, ctx);
      if (!js.all_finite() || !jp.all_finite()) throw UnrollError(t + 1, std::move(traj));
      traj.state_jacobians.push_back(std::move(js));
      traj.param_jacobians.push_back(std::move(jp));
    }
    traj.states.push_back(std::move(next));
    record_loss(t + 1);
  }
  return traj;
}

/// (1/N) sum_{t=0..N} l_t along the unroll, in plain doubles. A trajectory
/// that leaves the finite range yields the first non-finite partial sum.
inline double mean_unrolled_loss(const SystemSpec& sys, std::span<const double> theta,
                                 std::span<const double> s0, std::size_t steps) {
  sys.check_dims(theta, s0);
  if (steps == 0) throw DomainError("mean_unrolled_loss: need at least one step");
  Vector s(s0.begin(), s0.end());
  double acc = sys.loss<double>(s, theta, {0, steps});
  for (std::size_t t = 0; t < steps; ++t) {
    s = sys.step<double>(s, theta, {t, steps});
    acc += sys.loss<double>(s, theta, {t + 1, steps});
    if (!std::isfinite(acc)) return acc;
  }
  return acc / static_cast<double>(steps);
}

}  // namespace chaosgrad::systems
