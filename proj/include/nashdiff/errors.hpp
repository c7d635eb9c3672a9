#pragma once

#include <stdexcept>
#include <string>

namespace nashdiff {

// Bad configuration value or argument combination.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Data that violates a type invariant (out-of-range utility, malformed record).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The IR-feasible frontier arc is empty.
class InfeasibleInstance : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN/Inf produced by a numeric kernel, or a stale cache.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateInput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace nashdiff
