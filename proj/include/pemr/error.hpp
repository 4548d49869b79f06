#pragma once

#include <stdexcept>
#include <string>

namespace pemr {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Audio too short for the requested segment or window.
class InsufficientAudioError : public Error {
 public:
  using Error::Error;
};

/// A configuration or argument is outside its valid domain.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A non-finite value appeared in a loss or gradient.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// A file does not match its expected binary/text layout.
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// A metric is undefined for the given labels (e.g. one class absent).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

/// Input too small or too uniform for the computation to be defined:
/// filterbank bands without support, sequences under two frames,
/// batches of one.
class DegenerateError : public Error {
 public:
  using Error::Error;
};

/// Training labels contain fewer than two classes.
class DegenerateLabelsError : public DegenerateError {
 public:
  using DegenerateError::DegenerateError;
};

}  // namespace pemr
