#pragma once

#include <stdexcept>
#include <string>

namespace lfuse {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite value where a finite one is required.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// Precondition on an argument violated (bad shape, negative step, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Malformed input file or document. `line` is 1-based, 0 when unknown.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class MonotonicityError : public ParseError {
 public:
  using ParseError::ParseError;
};

class VersionError : public ParseError {
 public:
  using ParseError::ParseError;
};

/// Architecture / checkpoint disagreement.
class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

}  // namespace lfuse
