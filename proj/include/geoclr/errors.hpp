#pragma once

#include <stdexcept>
#include <string>

namespace geoclr {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inconsistent or out-of-range configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input text (manifest lines, JSON documents, config files).
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Well-formed input that violates a data invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite or overflowing values during computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace geoclr
