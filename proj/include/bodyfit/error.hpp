#pragma once

#include <stdexcept>
#include <string>

namespace bodyfit {

// Bad inputs: malformed files, broken invariants, unusable configurations.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite energies, singular systems, diverged optimizations.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace bodyfit
