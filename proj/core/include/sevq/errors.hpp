#pragma once

#include <stdexcept>
#include <string>

namespace sevq {

/// Base of every error raised by the toolkit. `exit_code()` is the process
/// status the CLI reports for it.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

/// Bad input: out-of-range values, shape mismatches, inconsistent configs.
class ValidationError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

/// Malformed text input. The message names the offending line.
class ParseError : public ValidationError {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A lung mask that cannot be turned into six regions.
class GeometryError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Non-finite values during a computation.
class NumericError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

class IoError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

}  // namespace sevq
