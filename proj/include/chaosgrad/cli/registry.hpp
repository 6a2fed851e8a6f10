#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "chaosgrad/cli/config.hpp"
#include "chaosgrad/core/error.hpp"
#include "chaosgrad/core/linalg.hpp"
#include "chaosgrad/systems/system.hpp"
#include "chaosgrad/systems/zoo.hpp"

namespace chaosgrad::cli {

inline const std::vector<std::string>& system_names() {
  static const std::vector<std::string> names = {
      "linear", "time-varying", "heat", "drift-diffusion", "sinusoid",
      "double-pendulum", "sgd-unroll", "logistic"};
  return names;
}

/// A system together with the parameter vector and initial state to run it at.
struct BoundSystem {
  systems::SystemSpec spec;
  Vector theta;
  Vector s0;
};

namespace detail {

inline Matrix square_from(const std::string& key, const std::vector<double>& flat) {
  const auto n = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(flat.size()))));
  if (n == 0 || n * n != flat.size()) {
    throw ConfigError("'" + key + "' must hold a square matrix in row-major order, got " +
                      std::to_string(flat.size()) + " entries");
  }
  return Matrix::from_row_major(n, n, flat);
}

inline systems::PdeConfig pde_config(Config& cfg, bool with_drift) {
  systems::PdeConfig c;
  c.n = cfg.get_size("system.n", 16);
  c.a = cfg.get_double("system.a", 0.0);
  c.b = cfg.get_double("system.b", 1.0);
  c.dt = cfg.get_double("system.dt", 1e-3);
  c.beta = with_drift ? cfg.get_double("system.beta", 0.0) : 0.0;
  if (cfg.has("system.r") && cfg.has("system.alpha")) {
    throw ConfigError("give either system.r or system.alpha, not both");
  }
  if (cfg.has("system.r")) {
    const double r = cfg.get_double("system.r");
    c.alpha = r * c.dx() * c.dx() / c.dt;
  } else {
    c.alpha = cfg.get_double("system.alpha", 1.0);
  }
  return c;
}

}  // namespace detail

/// Builds the system described by the `system.*` keys. `system.theta` and
/// `system.s0` override the system defaults for any name.
inline BoundSystem build_system(Config& cfg, const std::string& fallback_name = "") {
  const std::string name =
      fallback_name.empty() ? cfg.get_string("system.name") : cfg.get_string("system.name", fallback_name);
  systems::SystemSpec spec;
  try {
    if (name == "linear") {
      const auto a = cfg.get_doubles("system.matrix");
      const std::string loss = cfg.get_string("system.loss", "mean-squared");
      systems::LinearLoss kind;
      if (loss == "mean-squared") {
        kind = systems::LinearLoss::MeanSquaredState;
      } else if (loss == "sum-final") {
        kind = systems::LinearLoss::SumOfFinalState;
      } else {
        throw ConfigError("system.loss must be mean-squared or sum-final, got '" + loss + "'");
      }
      spec = systems::make_linear_map(detail::square_from("system.matrix", a), kind);
    } else if (name == "time-varying") {
      const std::size_t n = cfg.get_size("system.dim");
      const auto flat = cfg.get_doubles("system.matrices");
      if (n == 0 || flat.empty() || flat.size() % (n * n) != 0) {
        throw ConfigError("system.matrices must hold a whole number of dim x dim matrices");
      }
      std::vector<Matrix> seq;
      for (std::size_t k = 0; k < flat.size() / (n * n); ++k) {
        seq.push_back(Matrix::from_row_major(
            n, n, std::vector<double>(flat.begin() + k * n * n, flat.begin() + (k + 1) * n * n)));
      }
      spec = systems::make_time_varying_map(std::move(seq));
    } else if (name == "heat") {
      spec = systems::make_heat_equation(detail::pde_config(cfg, false));
    } else if (name == "drift-diffusion") {
      spec = systems::make_drift_diffusion(detail::pde_config(cfg, true));
    } else if (name == "sinusoid") {
      spec = systems::make_sinusoid_loss(cfg.get_double("system.w", 1.0));
    } else if (name == "double-pendulum") {
      systems::DoublePendulumParams p;
      p.m1 = cfg.get_double("system.m1", p.m1);
      p.m2 = cfg.get_double("system.m2", p.m2);
      p.l1 = cfg.get_double("system.l1", p.l1);
      p.l2 = cfg.get_double("system.l2", p.l2);
      p.g = cfg.get_double("system.g", p.g);
      p.dt = cfg.get_double("system.dt", p.dt);
      spec = systems::make_double_pendulum(p);
    } else if (name == "sgd-unroll") {
      spec = systems::make_sgd_unroll(cfg.get_doubles("system.lambda", std::vector<double>{1.0}));
    } else if (name == "logistic") {
      spec = systems::make_logistic_map(cfg.get_double("system.r", 4.0),
                                        cfg.get_double("system.x0", 0.3));
    } else {
      std::string known;
      for (const auto& n : system_names()) known += (known.empty() ? "" : ", ") + n;
      throw ConfigError("unknown system '" + name + "' (known: " + known + ")");
    }
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  } catch (const DimensionError& e) {
    throw ConfigError(e.what());
  }
  BoundSystem out;
  out.theta = cfg.get_doubles("system.theta", spec.default_theta);
  out.s0 = cfg.get_doubles("system.s0", spec.default_s0);
  if (out.theta.size() != spec.param_dim) {
    throw ConfigError("system.theta: " + name + " takes " + std::to_string(spec.param_dim) +
                      " parameters, got " + std::to_string(out.theta.size()));
  }
  if (out.s0.size() != spec.state_dim) {
    throw ConfigError("system.s0: " + name + " has state size " + std::to_string(spec.state_dim) +
                      ", got " + std::to_string(out.s0.size()));
  }
  out.spec = std::move(spec);
  return out;
}

}  // namespace chaosgrad::cli
