#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "chaosgrad/core/error.hpp"
#include "chaosgrad/core/linalg.hpp"

namespace chaosgrad::ad {

enum class Op : std::uint8_t {
  Input,
  Constant,
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  Sin,
  Cos,
  Exp,
  Log,
  Tanh,
  Sqrt,
  Abs,
  PowConst,
  Pow,
  Min,
  Max,
};

inline const char* op_name(Op op);

/// One recorded operation. Unused parent slots hold -1.
struct Node {
  Op op = Op::Constant;
  std::int32_t parent[2] = {-1, -1};
  double partial[2] = {0.0, 0.0};
  double value = 0.0;
  double constant = 0.0;  // exponent for PowConst
};

class Tape;

/// Reverse-mode active scalar. A Var without a tape is a passive constant:
/// arithmetic between two passive values never touches a tape, and a passive
/// operand meeting an active one is lifted onto the active value's tape.
class Var {
 public:
  Var() = default;
  Var(double v) : value_(v) {}  // NOLINT: literals mix freely with active values
  Var(Tape* tape, std::int32_t index, double v) : tape_(tape), index_(index), value_(v) {}

  double value() const noexcept { return value_; }
  std::int32_t index() const noexcept { return index_; }
  Tape* tape() const noexcept { return tape_; }
  bool active() const noexcept { return tape_ != nullptr; }

  Var& operator+=(const Var& o);
  Var& operator-=(const Var& o);
  Var& operator*=(const Var& o);
  Var& operator/=(const Var& o);

 private:
  Tape* tape_ = nullptr;
  std::int32_t index_ = -1;
  double value_ = 0.0;
};

inline double value_of(double x) { return x; }
inline double value_of(const Var& x) { return x.value(); }

/// Append-only record of one evaluation. Nodes are stored in evaluation
/// order, so every parent index is smaller than its child's index, and a
/// single backward pass over the vector is a valid reverse sweep.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var input(double v) {
    Var x = push(Op::Input, v, -1, 0.0, -1, 0.0);
    inputs_.push_back(x.index());
    return x;
  }

  Var constant(double v) { return push(Op::Constant, v, -1, 0.0, -1, 0.0); }

  // Same value as x, no derivative flowing back through it.
  Var stop_gradient(const Var& x) { return constant(x.value()); }

  // Lifts a passive value onto this tape; active values pass through.
  Var lift(const Var& x) {
    if (x.active()) {
      if (x.tape() != this) throw Error("Var belongs to a different tape");
      return x;
    }
    return constant(x.value());
  }

  Var push(Op op, double value, std::int32_t p0, double d0, std::int32_t p1, double d1,
           double constant = 0.0) {
    if (!std::isfinite(value) || !std::isfinite(d0) || !std::isfinite(d1)) {
      throw NonFiniteError(std::string("non-finite intermediate in ") + op_name(op));
    }
    Node n;
    n.op = op;
    n.parent[0] = p0;
    n.parent[1] = p1;
    n.partial[0] = d0;
    n.partial[1] = d1;
    n.value = value;
    n.constant = constant;
    nodes_.push_back(n);
    return Var(this, static_cast<std::int32_t>(nodes_.size() - 1), value);
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  std::size_t input_count() const noexcept { return inputs_.size(); }
  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  const std::vector<std::int32_t>& inputs() const noexcept { return inputs_; }

  void reserve(std::size_t n) { nodes_.reserve(n); }

  /// d(node `output`)/d(input_i) for every registered input, by one sweep
  /// from `output` down to the first node.
  Vector gradient(std::int32_t output, double seed = 1.0) const {
    if (output < 0 || static_cast<std::size_t>(output) >= nodes_.size()) {
      throw Error("Tape::gradient: invalid output node " + std::to_string(output));
    }
    std::vector<double> adj(static_cast<std::size_t>(output) + 1, 0.0);
    adj[output] = seed;
    for (std::int32_t i = output; i >= 0; --i) {
      const double a = adj[i];
      if (a == 0.0) continue;
      const Node& n = nodes_[i];
      if (n.parent[0] >= 0) adj[n.parent[0]] += n.partial[0] * a;
      if (n.parent[1] >= 0) adj[n.parent[1]] += n.partial[1] * a;
    }
    Vector g(inputs_.size(), 0.0);
    for (std::size_t k = 0; k < inputs_.size(); ++k) {
      if (inputs_[k] <= output) g[k] = adj[inputs_[k]];
    }
    return g;
  }

  /// Re-evaluates every node from new input values. Values only; partials
  /// are left as recorded.
  std::vector<double> replay(std::span<const double> input_values) const {
    if (input_values.size() != inputs_.size()) {
      throw DimensionError("Tape::replay: expected " + std::to_string(inputs_.size()) +
                           " inputs, got " + std::to_string(input_values.size()));
    }
    std::vector<double> v(nodes_.size());
    std::size_t next_input = 0;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const Node& n = nodes_[i];
      const double a = n.parent[0] >= 0 ? v[n.parent[0]] : 0.0;
      const double b = n.parent[1] >= 0 ? v[n.parent[1]] : 0.0;
      switch (n.op) {
        case Op::Input: v[i] = input_values[next_input++]; break;
        case Op::Constant: v[i] = n.value; break;
        case Op::Add: v[i] = a + b; break;
        case Op::Sub: v[i] = a - b; break;
        case Op::Mul: v[i] = a * b; break;
        case Op::Div: v[i] = a / b; break;
        case Op::Neg: v[i] = -a; break;
        case Op::Sin: v[i] = std::sin(a); break;
        case Op::Cos: v[i] = std::cos(a); break;
        case Op::Exp: v[i] = std::exp(a); break;
        case Op::Log: v[i] = std::log(a); break;
        case Op::Tanh: v[i] = std::tanh(a); break;
        case Op::Sqrt: v[i] = std::sqrt(a); break;
        case Op::Abs: v[i] = std::abs(a); break;
        case Op::PowConst: v[i] = std::pow(a, n.constant); break;
        case Op::Pow: v[i] = std::pow(a, b); break;
        case Op::Min: v[i] = a <= b ? a : b; break;
        case Op::Max: v[i] = a >= b ? a : b; break;
      }
    }
    return v;
  }

 private:
  std::vector<Node> nodes_;
  std::vector<std::int32_t> inputs_;
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Constant: return "constant";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Neg: return "neg";
    case Op::Sin: return "sin";
    case Op::Cos: return "cos";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Tanh: return "tanh";
    case Op::Sqrt: return "sqrt";
    case Op::Abs: return "abs";
    case Op::PowConst: return "pow";
    case Op::Pow: return "pow";
    case Op::Min: return "min";
    case Op::Max: return "max";
  }
  return "?";
}

namespace detail {

inline Tape* common_tape(const Var& a, const Var& b) {
  if (a.active() && b.active() && a.tape() != b.tape()) {
    throw Error("operands recorded on different tapes");
  }
  return a.active() ? a.tape() : b.tape();
}

template <class Fn>
Var unary(const Var& x, Op op, double value, Fn&& partial) {
  if (!x.active()) return Var(value);
  return x.tape()->push(op, value, x.index(), partial(), -1, 0.0);
}

inline Var binary(const Var& a, const Var& b, Op op, double value, double da, double db) {
  Tape* t = common_tape(a, b);
  if (t == nullptr) return Var(value);
  const Var la = t->lift(a);
  const Var lb = t->lift(b);
  return t->push(op, value, la.index(), da, lb.index(), db);
}

}  // namespace detail

inline Var operator+(const Var& a, const Var& b) {
  return detail::binary(a, b, Op::Add, a.value() + b.value(), 1.0, 1.0);
}
inline Var operator-(const Var& a, const Var& b) {
  return detail::binary(a, b, Op::Sub, a.value() - b.value(), 1.0, -1.0);
}
inline Var operator*(const Var& a, const Var& b) {
  return detail::binary(a, b, Op::Mul, a.value() * b.value(), b.value(), a.value());
}
inline Var operator/(const Var& a, const Var& b) {
  const double q = a.value() / b.value();
  return detail::binary(a, b, Op::Div, q, 1.0 / b.value(), -q / b.value());
}
inline Var operator-(const Var& a) {
  return detail::unary(a, Op::Neg, -a.value(), [] { return -1.0; });
}

inline Var& Var::operator+=(const Var& o) { return *this = *this + o; }
inline Var& Var::operator-=(const Var& o) { return *this = *this - o; }
inline Var& Var::operator*=(const Var& o) { return *this = *this * o; }
inline Var& Var::operator/=(const Var& o) { return *this = *this / o; }

inline Var sin(const Var& x) {
  return detail::unary(x, Op::Sin, std::sin(x.value()), [&] { return std::cos(x.value()); });
}
inline Var cos(const Var& x) {
  return detail::unary(x, Op::Cos, std::cos(x.value()), [&] { return -std::sin(x.value()); });
}
inline Var exp(const Var& x) {
  const double e = std::exp(x.value());
  return detail::unary(x, Op::Exp, e, [&] { return e; });
}
inline Var log(const Var& x) {
  if (x.value() < 0.0) throw DomainError("log of a negative number");
  return detail::unary(x, Op::Log, std::log(x.value()), [&] { return 1.0 / x.value(); });
}
inline Var tanh(const Var& x) {
  const double t = std::tanh(x.value());
  return detail::unary(x, Op::Tanh, t, [&] { return 1.0 - t * t; });
}
inline Var sqrt(const Var& x) {
  if (x.value() < 0.0) throw DomainError("sqrt of a negative number");
  const double r = std::sqrt(x.value());
  return detail::unary(x, Op::Sqrt, r, [&] { return 0.5 / r; });
}
inline Var abs(const Var& x) {
  return detail::unary(x, Op::Abs, std::abs(x.value()),
                       [&] { return x.value() >= 0.0 ? 1.0 : -1.0; });
}
inline Var pow(const Var& x, double p) {
  const double v = std::pow(x.value(), p);
  if (!x.active()) return Var(v);
  return x.tape()->push(Op::PowConst, v, x.index(), p * std::pow(x.value(), p - 1.0), -1, 0.0, p);
}
inline Var pow(const Var& x, const Var& y) {
  if (!y.active()) return pow(x, y.value());
  if (x.value() < 0.0) throw DomainError("pow with negative base and active exponent");
  const double v = std::pow(x.value(), y.value());
  return detail::binary(x, y, Op::Pow, v, y.value() * std::pow(x.value(), y.value() - 1.0),
                        v * std::log(x.value()));
}
inline Var min(const Var& a, const Var& b) {
  const bool left = a.value() <= b.value();
  return detail::binary(a, b, Op::Min, left ? a.value() : b.value(), left ? 1.0 : 0.0,
                        left ? 0.0 : 1.0);
}
inline Var max(const Var& a, const Var& b) {
  const bool left = a.value() >= b.value();
  return detail::binary(a, b, Op::Max, left ? a.value() : b.value(), left ? 1.0 : 0.0,
                        left ? 0.0 : 1.0);
}

}  // namespace chaosgrad::ad
