#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pcal {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller-supplied argument violates an operation's precondition.
class InvalidParameter : public Error {
 public:
  using Error::Error;
};

/// Text input could not be parsed. `line()` is 1-based, 0 when unknown.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Binary or structured file content is corrupt or inconsistent.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Operation not permitted in the session's current phase.
class StateError : public Error {
 public:
  using Error::Error;
};

/// Session has a training job in flight; the request may be retried later.
class BusyError : public StateError {
 public:
  using StateError::StateError;
};

}  // namespace pcal
