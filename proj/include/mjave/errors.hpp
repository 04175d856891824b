#pragma once

#include <stdexcept>
#include <string>

namespace mjave {

// Base class for everything thrown by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shape / dimension contract violations.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite values produced by an operation, or training divergence.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed input files or inconsistent dataset contents.
class DataError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration: bad flag values, unknown ablation keys or modes.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace mjave
