#pragma once

#include <stdexcept>
#include <string>

namespace eaxl {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not chain.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values caught by the debug scan, or an invalid numeric argument.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed corpus input: bad CSV arity, unknown emotion labels, empty text.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Unreadable, truncated or mismatched checkpoint files.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace eaxl
