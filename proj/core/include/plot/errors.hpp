#pragma once

#include <stdexcept>
#include <string>

namespace plot {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand dimensions do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// An argument violates a documented precondition (non-positive lambda,
// zero-norm row, out-of-range label, ...).
class ValueError : public Error {
 public:
  using Error::Error;
};

// exp(-C/lambda) lost a whole row or column, or a Sinkhorn denominator fell
// below the representable range.
class UnderflowError : public Error {
 public:
  using Error::Error;
};

// A computation produced NaN or infinity.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed, truncated or incompatible file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Training aborted; the message carries the epoch and batch position.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace plot
