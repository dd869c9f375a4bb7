#pragma once

#include <stdexcept>
#include <string>

namespace ccrl {

// User-facing failures (bad input, bad files, bad config) map to exit code 1.
// Anything else escaping to main is treated as an internal invariant violation.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NonFiniteError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Broken internal contract (tape reuse, misaligned parameter sets, ...).
class InvariantError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace ccrl
