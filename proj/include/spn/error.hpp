#pragma once

#include <stdexcept>
#include <string>

namespace spn {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A computation produced NaN/Inf, broke down, or failed to make progress.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Invalid user-facing parameters (solver settings, experiment configs).
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace spn
