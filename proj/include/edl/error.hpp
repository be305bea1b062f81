#pragma once

#include <stdexcept>
#include <string>

namespace edl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or image shapes that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A caller-supplied argument outside its documented range.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// A value outside the mathematical domain of a function (e.g. a
/// non-positive Dirichlet parameter).
class DomainError : public Error {
 public:
  using Error::Error;
};

class InvalidInputError : public Error {
 public:
  using Error::Error;
};

/// Model configuration that cannot be built or used as asked.
class ConfigurationError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint file failed validation. `field()` names what was wrong.
class CorruptCheckpointError : public Error {
 public:
  CorruptCheckpointError(std::string field, const std::string& detail)
      : Error("corrupt checkpoint: " + field + ": " + detail),
        field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

class UnsupportedVersionError : public CorruptCheckpointError {
 public:
  using CorruptCheckpointError::CorruptCheckpointError;
};

/// Dataset directory or manifest that is missing, empty or inconsistent.
class DatasetError : public Error {
 public:
  using Error::Error;
};

/// Loss became non-finite during training.
class TrainingDivergedError : public Error {
 public:
  TrainingDivergedError(int epoch, int batch, const std::string& detail)
      : Error("training diverged at epoch " + std::to_string(epoch) +
              ", batch " + std::to_string(batch) + ": " + detail),
        epoch_(epoch),
        batch_(batch) {}
  int epoch() const { return epoch_; }
  int batch() const { return batch_; }

 private:
  int epoch_;
  int batch_;
};

/// Uncertainty scores carry no information (e.g. constant u), so no
/// threshold can be calibrated.
class CalibrationDegenerateError : public Error {
 public:
  using Error::Error;
};

}  // namespace edl
