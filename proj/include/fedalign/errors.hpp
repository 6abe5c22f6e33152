#pragma once

#include <stdexcept>
#include <string>

namespace fedalign {

// Base for all library errors. Subclasses map onto CLI exit codes:
// input/parameter problems exit 2, broken internal contracts exit 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible matrix/vector dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Out-of-domain argument (alpha <= 0, invalid rank, empty class list, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Input that is structurally valid but mathematically degenerate
// (zero vector into a normalize/cosine).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

// Softmax (or similar) asked to distribute mass over an empty support.
class EmptySupportError : public Error {
 public:
  using Error::Error;
};

// Malformed serialized payload: bad magic, truncation, dim mismatch.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Invalid or inconsistent run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A caller broke an API contract (stale cache, mismatched state).
class ContractError : public Error {
 public:
  using Error::Error;
};

}  // namespace fedalign
