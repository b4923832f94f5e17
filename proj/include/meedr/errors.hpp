#pragma once

#include <stdexcept>
#include <string>

namespace meedr {

// Bad user-supplied configuration (CLI exit code 2).
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

// Numerical failure: quadrature that did not converge, divergence during
// training, non-finite intermediate values (CLI exit code 3).
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace meedr
