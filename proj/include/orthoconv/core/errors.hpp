#pragma once

#include <stdexcept>
#include <string>

namespace orthoconv {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or matrix dimensions that do not fit together.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A configuration the operation cannot honor (bad stride, unsupported padding, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Singular systems, failed factorizations, zero operators, non-finite values.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public NumericalError {
 public:
  ConvergenceError(const std::string& what, double residual)
      : NumericalError(what + " (residual " + std::to_string(residual) + ")"), residual_(residual) {}

  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

// Malformed kernel files or descriptors.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace orthoconv
