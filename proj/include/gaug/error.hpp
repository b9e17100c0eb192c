#pragma once

#include <stdexcept>
#include <string>

namespace gaug {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor or matrix extents.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Argument outside its admissible range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// API misuse, e.g. calling backward on a non-scalar.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent dataset content.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Optimization produced a non-finite value.
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// Iterative numerical routine failed (no convergence, NaN).
class NumericalError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace gaug
