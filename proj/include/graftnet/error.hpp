#pragma once

#include <stdexcept>
#include <string>

namespace graftnet {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or rank mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A forward op produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Batch statistics requested on a batch with a single element per channel.
class DegenerateBatchError : public Error {
 public:
  using Error::Error;
};

/// Attention problem larger than the configured position cap.
class CapacityError : public Error {
 public:
  using Error::Error;
};

/// Misuse of the differentiation tape (double backward, empty tape, ...).
class StateError : public Error {
 public:
  using Error::Error;
};

/// File parsing or writing failure. The message always carries the path.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed configuration file or option.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace graftnet
