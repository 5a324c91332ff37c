#pragma once

#include <stdexcept>
#include <string>

namespace kernatt {

// Base for every error raised by the library. Callers that only care about
// "something went wrong in the numerics" catch this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

// Numerical breakdown during a forward or backward pass. Training reports
// these as divergence.
class NumericFailure : public Error {
 public:
  using Error::Error;
};

// exp() argument above the overflow threshold, or a non-finite intermediate.
class OverflowError : public NumericFailure {
 public:
  using NumericFailure::NumericFailure;
};

class NonFiniteError : public NumericFailure {
 public:
  using NumericFailure::NumericFailure;
};

class TapeError : public Error {
 public:
  using Error::Error;
};

// A visible kernel score was negative: the smoother weights would not be a
// probability distribution.
class InvalidKernelError : public Error {
 public:
  using Error::Error;
};

class DegenerateDenominatorError : public NumericFailure {
 public:
  using NumericFailure::NumericFailure;
};

class EmptyVisibilityError : public Error {
 public:
  using Error::Error;
};

class PositionRangeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  ConfigError(const std::string& what, int line = 0, std::string field = {})
      : Error(format(what, line, field)), message_(what), line_(line), field_(std::move(field)) {}

  int line() const { return line_; }
  /// The message without the line and field prefix.
  const std::string& message() const { return message_; }
  const std::string& field() const { return field_; }

 private:
  static std::string format(const std::string& what, int line, const std::string& field) {
    std::string out;
    if (line > 0) out += "line " + std::to_string(line) + ": ";
    if (!field.empty()) out += "'" + field + "': ";
    return out + what;
  }

  std::string message_;
  int line_;
  std::string field_;
};

class CheckpointError : public Error {
 public:
  enum class Kind { Io, Malformed, DimensionMismatch, ConfigMismatch };

  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

}  // namespace kernatt
