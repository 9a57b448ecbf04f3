#pragma once

#include <stdexcept>
#include <string>

namespace urvfl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor or model dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an operation's precondition (non-scalar loss, frozen model
/// modified, out-of-range argument).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Backward was requested on a tape that has already been consumed.
class ReuseError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Invalid experiment configuration. Raised before any compute starts.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace urvfl
