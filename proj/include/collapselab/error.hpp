#pragma once

#include <stdexcept>
#include <string>

namespace collapselab {

// Single exception type for contract violations and malformed input.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when a statistic is mathematically undefined for its input
// (zero variance, single class, constant marginals).
class UndefinedError : public Error {
 public:
  using Error::Error;
};

}  // namespace collapselab
