#pragma once

#include <stdexcept>
#include <string>

namespace btc {

// Invalid user input: bad parameters, malformed config, inconsistent dimensions.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DimensionMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A numerical invariant (trace, Hermiticity, positivity, eigen-solver
// convergence) broke during a computation.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvariantViolation : public NumericalError {
 public:
  InvariantViolation(const std::string& what, double time)
      : NumericalError(what + " at t = " + std::to_string(time)), time_(time) {}

  double time() const noexcept { return time_; }

 private:
  double time_;
};

}  // namespace btc
