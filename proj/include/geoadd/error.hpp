#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace geoadd {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

/// Invalid model or algorithm configuration (basis too small, S > n, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "config_error"; }
};

/// An argument lies outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "domain_error"; }
};

/// Malformed or inconsistent input data (missing columns, non-finite values).
class DataError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "data_error"; }
};

/// A factorization or linear solve failed.
class NumericalError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "numerical_error"; }
};

/// Unknown term names and similar request-level mistakes.
class RequestError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "request_error"; }
};

/// An iterative method hit its iteration or evaluation cap.
///
/// `trace` holds the objective history; `best_state` the best point seen
/// (empty for the inner Newton solver).
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, std::vector<double> trace,
                   std::vector<double> best_state = {})
      : Error(what), trace(std::move(trace)), best_state(std::move(best_state)) {}
  const char* kind() const noexcept override { return "convergence_error"; }

  std::vector<double> trace;
  std::vector<double> best_state;
};

}  // namespace geoadd
