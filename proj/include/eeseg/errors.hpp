#pragma once

#include <stdexcept>

namespace eeseg {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Contract violation: bad dims, out-of-range labels, mismatched axes.
struct ShapeError : Error {
  using Error::Error;
};

// Invalid configuration value (hyperparameter, threshold, frequency range).
struct ConfigError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

// Unrecognized magic or unsupported version in a binary stream.
struct FormatError : IoError {
  using IoError::IoError;
};

// Stream ended before the declared payload.
struct TruncationError : IoError {
  using IoError::IoError;
};

// Structurally readable stream whose contents contradict the expected model.
struct CorruptionError : IoError {
  using IoError::IoError;
};

// Training produced a non-finite loss.
struct DivergenceError : Error {
  using Error::Error;
};

}  // namespace eeseg
