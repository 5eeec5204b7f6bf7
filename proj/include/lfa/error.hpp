#pragma once

#include <stdexcept>
#include <string>

namespace lfa {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input: malformed files, violated invariants, inconsistent configuration.
/// The CLI maps these to exit status 1.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A referenced file could not be found or decoded.
class IngestionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Patch or footprint geometry does not fit the target image.
class GeometryError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Failure while a stage was running (I/O, divergence). Exit status 2.
class RuntimeFailure : public Error {
 public:
  using Error::Error;
};

}  // namespace lfa
