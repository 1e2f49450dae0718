#pragma once

#include <stdexcept>
#include <string>

namespace autofed {

// Malformed input, shape mismatch, or an invalid configuration value.
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Non-finite values encountered during training or weight learning.
class NumericalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Argument outside the mathematical domain of a function (e.g. a simplex
// point on the boundary passed to a log-density).
class DomainError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// An internal invariant did not hold at an operation boundary.
class InvariantError : public std::logic_error {
public:
  using std::logic_error::logic_error;
};

class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

}  // namespace autofed
