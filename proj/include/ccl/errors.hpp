#pragma once

#include <stdexcept>
#include <string>

namespace ccl {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not conform.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A value left the domain of an operation (log of non-positive, zero-norm row, NaN/Inf).
class DomainError : public Error {
 public:
  using Error::Error;
};

// A caller broke an operation's precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// backward() was asked to differentiate a value with no recorded ops.
class EmptyTapeError : public ContractError {
 public:
  using ContractError::ContractError;
};

// Invalid configuration or parameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or unsupported file.
class FormatError : public Error {
 public:
  using Error::Error;
};

// EM could not separate the data (all values identical).
class DegenerateFitError : public Error {
 public:
  using Error::Error;
};

}  // namespace ccl
