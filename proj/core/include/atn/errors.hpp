#pragma once

#include <stdexcept>
#include <string>

namespace atn {

/// Base class for every error contract raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inconsistent configuration: shapes, channel math, out-of-range settings.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// API misuse: backward without forward, wrong window length, empty input.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf produced where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed or mismatching file on disk.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace atn
