#pragma once

#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fatnet {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Malformed text input. Carries the 1-based line where parsing stopped.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Violated operation precondition (bad argument value, out-of-range label, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// NaN or infinity where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated binary file.
class FormatError : public Error {
 public:
  using Error::Error;
};

inline std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

}  // namespace fatnet
