#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace chaosgrad {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes disagree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// log/sqrt of a negative number and similar.
class DomainError : public Error {
 public:
  using Error::Error;
};

// A NaN or Inf showed up where a finite value is required. `step` is the
// unroll step at which it was first observed, when known.
class NonFiniteError : public Error {
 public:
  explicit NonFiniteError(const std::string& what,
                          std::optional<std::size_t> step = std::nullopt)
      : Error(what), step_(step) {}

  std::optional<std::size_t> step() const noexcept { return step_; }

 private:
  std::optional<std::size_t> step_;
};

class ConvergenceError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace chaosgrad
