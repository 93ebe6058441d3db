#pragma once

#include <stdexcept>
#include <string>

namespace mmunet {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or malformed input shapes. Maps to CLI exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Tensor extents do not line up for an operation.
class ShapeError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Non-finite values or divergence. Maps to CLI exit code 3.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace mmunet
