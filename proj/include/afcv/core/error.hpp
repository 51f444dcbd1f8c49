#pragma once

#include <stdexcept>
#include <string>

namespace afcv {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or configuration shape mismatch.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values or unsupported formats.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File-level failures: missing, unreadable or corrupt files.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Input data that violates an operation's precondition.
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace afcv
