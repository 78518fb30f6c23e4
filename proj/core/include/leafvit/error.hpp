#pragma once

#include <stdexcept>
#include <string>

namespace leafvit {

/// Root of every exception thrown by the engine. Subclasses map onto the
/// failure categories the CLI turns into exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents do not fit the operation (shape mismatch, bad axis, ...).
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid hyperparameter or layer configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// API misuse, e.g. backward() on a non-scalar or an empty confusion matrix.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Batch statistics cannot be formed (one value per channel in train mode).
class StatisticsError : public Error {
 public:
  using Error::Error;
};

class DecodeError : public Error {
 public:
  using Error::Error;
};

class IngestionError : public Error {
 public:
  using Error::Error;
};

class LabelError : public Error {
 public:
  using Error::Error;
};

/// MVW1 archive could not be written or read back.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or gradient during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace leafvit
