#pragma once

#include <stdexcept>
#include <string>

namespace posterpp {

/// Base of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN or other non-finite numeric state.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Out-of-range index (e.g. a class label).
class IndexError : public Error {
 public:
  using Error::Error;
};

/// Violated call contract (non-scalar loss, mismatched optimizer state, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Token or spatial grid not divisible into windows / pooling cells.
class LayoutError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File missing, unreadable or malformed.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace posterpp
