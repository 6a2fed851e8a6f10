#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "chaosgrad/autodiff/dual.hpp"
#include "chaosgrad/autodiff/tape.hpp"
#include "chaosgrad/core/error.hpp"
#include "chaosgrad/core/linalg.hpp"

namespace chaosgrad::systems {

/// Where in the unroll a step or loss is being evaluated. `t` is the index
/// of the input state (step maps s_t to s_{t+1}; loss evaluates l_t(s_t)),
/// `horizon` is the unroll length N.
struct StepContext {
  std::size_t t = 0;
  std::size_t horizon = 1;
};

template <class T>
using StepFn = std::function<std::vector<T>(std::span<const T>, std::span<const T>, StepContext)>;

template <class T>
using LossFn = std::function<T(std::span<const T>, std::span<const T>, StepContext)>;

template <class T>
struct Kernels {
  StepFn<T> step;
  LossFn<T> loss;
};

class SystemSpec;

template <class Model>
SystemSpec make_system(std::string name, std::size_t state_dim, std::size_t param_dim, Model model,
                       Vector default_s0, Vector default_theta,
                       std::map<std::string, std::string> metadata = {});

/// A differentiable transition s' = f(s, theta) with a per-step loss
/// l_t(s, theta). The step and loss are stored once per scalar type so the
/// same model can be run in plain doubles, forward mode and reverse mode.
/// Values are immutable after construction and safe to share across threads.
class SystemSpec {
 public:
  std::string name;
  std::size_t state_dim = 0;
  std::size_t param_dim = 0;
  Vector default_s0;
  Vector default_theta;
  std::map<std::string, std::string> metadata;

  template <class T>
  std::vector<T> step(std::span<const T> s, std::span<const T> theta, StepContext ctx) const {
    return std::get<Kernels<T>>(kernels_).step(s, theta, ctx);
  }

  template <class T>
  T loss(std::span<const T> s, std::span<const T> theta, StepContext ctx) const {
    return std::get<Kernels<T>>(kernels_).loss(s, theta, ctx);
  }

  void check_dims(std::span<const double> theta, std::span<const double> s0) const {
    if (theta.size() != param_dim) {
      throw DimensionError(name + ": expected " + std::to_string(param_dim) +
                           " parameters, got " + std::to_string(theta.size()));
    }
    if (s0.size() != state_dim) {
      throw DimensionError(name + ": expected state of size " + std::to_string(state_dim) +
                           ", got " + std::to_string(s0.size()));
    }
  }

  template <class Model>
  friend SystemSpec make_system(std::string name, std::size_t state_dim, std::size_t param_dim,
                                Model model, Vector default_s0, Vector default_theta,
                                std::map<std::string, std::string> metadata);

 private:
  std::tuple<Kernels<double>, Kernels<ad::Dual>, Kernels<ad::Var>> kernels_;
};

namespace detail {

template <class T, class Model>
Kernels<T> bind_kernels(const std::shared_ptr<const Model>& m, std::size_t state_dim) {
  Kernels<T> k;
  k.step = [m, state_dim](std::span<const T> s, std::span<const T> th, StepContext ctx) {
    std::vector<T> out = m->template step<T>(s, th, ctx);
    if (out.size() != state_dim) {
      throw DimensionError("step produced a state of size " + std::to_string(out.size()) +
                           ", expected " + std::to_string(state_dim));
    }
    return out;
  };
  k.loss = [m](std::span<const T> s, std::span<const T> th, StepContext ctx) {
    return m->template loss<T>(s, th, ctx);
  };
  return k;
}

}  // namespace detail

/// Wraps a model exposing
///   template <class T> std::vector<T> step(span<const T> s, span<const T> th, StepContext) const;
///   template <class T> T loss(span<const T> s, span<const T> th, StepContext) const;
/// into a SystemSpec.
template <class Model>
SystemSpec make_system(std::string name, std::size_t state_dim, std::size_t param_dim, Model model,
                       Vector default_s0, Vector default_theta,
                       std::map<std::string, std::string> metadata) {
  if (state_dim == 0) throw DimensionError(name + ": state dimension must be positive");
  if (default_s0.size() != state_dim) throw DimensionError(name + ": default_s0 size mismatch");
  if (default_theta.size() != param_dim) {
    throw DimensionError(name + ": default_theta size mismatch");
  }
  auto shared = std::make_shared<const Model>(std::move(model));
  SystemSpec spec;
  spec.name = std::move(name);
  spec.state_dim = state_dim;
  spec.param_dim = param_dim;
  spec.default_s0 = std::move(default_s0);
  spec.default_theta = std::move(default_theta);
  spec.metadata = std::move(metadata);
  spec.kernels_ = {detail::bind_kernels<double>(shared, state_dim),
                   detail::bind_kernels<ad::Dual>(shared, state_dim),
                   detail::bind_kernels<ad::Var>(shared, state_dim)};
  return spec;
}

}  // namespace chaosgrad::systems
