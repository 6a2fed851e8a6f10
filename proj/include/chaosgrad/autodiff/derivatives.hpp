#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "chaosgrad/autodiff/dual.hpp"
#include "chaosgrad/autodiff/tape.hpp"
#include "chaosgrad/core/error.hpp"
#include "chaosgrad/core/linalg.hpp"

// Differentiable programs are generic callables taking `const std::vector<T>&`
// and returning either `std::vector<T>` or a single `T`, for T in
// {double, ad::Dual, ad::Var}. Only the primitives overloaded in dual.hpp and
// tape.hpp may appear in them.

namespace chaosgrad::ad {

namespace detail {

template <class T, class R>
std::vector<T> as_vector(R&& r) {
  if constexpr (std::is_convertible_v<std::decay_t<R>, T>) {
    return std::vector<T>{T(std::forward<R>(r))};
  } else {
    return std::vector<T>(std::forward<R>(r));
  }
}

}  // namespace detail

template <class F>
Vector evaluate(F&& f, const Vector& x) {
  return detail::as_vector<double>(f(x));
}

/// Outputs of one recorded evaluation together with the tape that produced
/// them. output_nodes[i] is the tape node holding outputs[i].
struct Recording {
  Vector outputs;
  std::vector<std::int32_t> output_nodes;
  Tape tape;

  std::size_t output_count() const noexcept { return outputs.size(); }

  Vector replay(std::span<const double> inputs) const {
    const auto v = tape.replay(inputs);
    Vector out(output_nodes.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[output_nodes[i]];
    return out;
  }
};

template <class F>
Recording record(F&& f, const Vector& x) {
  Recording rec;
  std::vector<Var> xs;
  xs.reserve(x.size());
  for (double v : x) xs.push_back(rec.tape.input(v));
  auto out = detail::as_vector<Var>(f(std::as_const(xs)));
  rec.outputs.reserve(out.size());
  rec.output_nodes.reserve(out.size());
  for (const Var& o : out) {
    const Var lifted = rec.tape.lift(o);
    rec.outputs.push_back(lifted.value());
    rec.output_nodes.push_back(lifted.index());
  }
  return rec;
}

inline Vector reverse_gradient(const Recording& rec, std::size_t output_index, double seed = 1.0) {
  if (output_index >= rec.output_nodes.size()) {
    throw Error("reverse_gradient: output index " + std::to_string(output_index) +
                " out of range (" + std::to_string(rec.output_nodes.size()) + " outputs)");
  }
  return rec.tape.gradient(rec.output_nodes[output_index], seed);
}

/// J_f(x) v by a single dual-number pass.
template <class F>
Vector forward_jvp(F&& f, const Vector& x, const Vector& v) {
  if (x.size() != v.size()) {
    throw DimensionError("forward_jvp: direction has size " + std::to_string(v.size()) +
                         ", point has size " + std::to_string(x.size()));
  }
  std::vector<Dual> xs(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) xs[i] = Dual(x[i], v[i]);
  const auto out = detail::as_vector<Dual>(f(std::as_const(xs)));
  Vector jv(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) jv[i] = out[i].tangent;
  return jv;
}

template <class F>
Matrix jacobian_forward(F&& f, const Vector& x) {
  const std::size_t n = x.size();
  std::vector<Dual> xs(n);
  for (std::size_t i = 0; i < n; ++i) xs[i] = Dual(x[i]);
  Matrix jac;
  for (std::size_t j = 0; j < n; ++j) {
    xs[j].tangent = 1.0;
    const auto out = detail::as_vector<Dual>(f(std::as_const(xs)));
    xs[j].tangent = 0.0;
    if (j == 0) jac = Matrix(out.size(), n);
    for (std::size_t i = 0; i < out.size(); ++i) jac(i, j) = out[i].tangent;
  }
  if (n == 0) jac = Matrix(evaluate(f, x).size(), 0);
  return jac;
}

template <class F>
Matrix jacobian_reverse(F&& f, const Vector& x) {
  const Recording rec = record(f, x);
  Matrix jac(rec.output_count(), x.size());
  for (std::size_t i = 0; i < rec.output_count(); ++i) {
    const Vector row = reverse_gradient(rec, i);
    for (std::size_t j = 0; j < x.size(); ++j) jac(i, j) = row[j];
  }
  return jac;
}

/// (m x n) Jacobian. Forward mode when n <= m, reverse mode otherwise; the two
/// agree to rounding.
template <class F>
Matrix jacobian(F&& f, const Vector& x) {
  const std::size_t m = evaluate(f, x).size();
  return x.size() <= m ? jacobian_forward(f, x) : jacobian_reverse(f, x);
}

/// Central differences of a scalar program: (f(x+h e_i) - f(x-h e_i)) / 2h.
template <class F>
Vector finite_difference_gradient(F&& f, const Vector& x, double h = 1e-6) {
  if (!(h > 0.0)) throw DomainError("finite_difference_gradient: step must be positive");
  Vector g(x.size());
  Vector xp = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + h;
    const Vector fp = evaluate(f, xp);
    xp[i] = x[i] - h;
    const Vector fm = evaluate(f, xp);
    xp[i] = x[i];
    if (fp.size() != 1 || fm.size() != 1) {
      throw DimensionError("finite_difference_gradient: program must be scalar");
    }
    if (!std::isfinite(fp[0]) || !std::isfinite(fm[0])) {
      throw NonFiniteError("finite_difference_gradient: non-finite evaluation");
    }
    g[i] = (fp[0] - fm[0]) / (2.0 * h);
  }
  return g;
}

template <class F>
Matrix finite_difference_jacobian(F&& f, const Vector& x, double h = 1e-6) {
  if (!(h > 0.0)) throw DomainError("finite_difference_jacobian: step must be positive");
  const std::size_t m = evaluate(f, x).size();
  Matrix jac(m, x.size());
  Vector xp = x;
  for (std::size_t j = 0; j < x.size(); ++j) {
    xp[j] = x[j] + h;
    const Vector fp = evaluate(f, xp);
    xp[j] = x[j] - h;
    const Vector fm = evaluate(f, xp);
    xp[j] = x[j];
    for (std::size_t i = 0; i < m; ++i) {
      if (!std::isfinite(fp[i]) || !std::isfinite(fm[i])) {
        throw NonFiniteError("finite_difference_jacobian: non-finite evaluation");
      }
      jac(i, j) = (fp[i] - fm[i]) / (2.0 * h);
    }
  }
  return jac;
}

}  // namespace chaosgrad::ad
