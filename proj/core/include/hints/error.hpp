#pragma once

#include <stdexcept>
#include <string>

namespace hints {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid arguments, inconsistent shapes, bad configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Singular systems, failed factorizations, NaN losses, divergence.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// File missing, truncated, or in the wrong format.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace hints
