#pragma once

#include <stdexcept>
#include <string>

namespace abtts {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad command line or missing required argument.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent input files.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration (dimensions, hyperparameters, missing checkpoints).
class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values reached a place that requires finite input.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace abtts
