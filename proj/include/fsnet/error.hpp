#pragma once

#include <stdexcept>
#include <string>

namespace fsnet {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes disagree; the message names both shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated file content.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A request that cannot be satisfied with the given data (e.g. too few samples).
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

}  // namespace fsnet
