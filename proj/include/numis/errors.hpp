#pragma once

#include <stdexcept>
#include <string>

namespace numis {

// Base of every error the library throws. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or model shapes that do not fit together.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Bad or missing input data (files, labels, corpora).
class DataError : public Error {
 public:
  using Error::Error;
};

// Non-finite values or diverging optimisation.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A pipeline stage was run before the stage that produces its inputs.
class PrerequisiteError : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace numis
