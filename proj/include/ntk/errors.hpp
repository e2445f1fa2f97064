#pragma once

#include <stdexcept>
#include <string>

namespace ntk {

/// Base of every error raised by the library. `exit_code()` is the process
/// status the CLI reports for it.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 3; }
};

/// An argument lies outside the mathematical domain of an operation
/// (|rho| > 1, off-sphere input, table that does not cover the quadrature range).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Iterative procedure failed or produced a degenerate value.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Operation called outside its documented precondition
/// (e.g. an order-regime check on a chaotic architecture).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

}  // namespace ntk
