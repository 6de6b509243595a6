#pragma once

#include <stdexcept>
#include <string>

namespace overlearn {

/// Bad arguments or violated preconditions (fractions out of range,
/// dimension mismatches, unknown class indices, ...).
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed external input: CSV rows, config files, checkpoints.
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

/// Structurally valid input that is numerically unusable, e.g. a
/// zero-variance representation matrix handed to CKA.
struct DegenerateInputError : std::runtime_error {
  explicit DegenerateInputError(const std::string& what) : std::runtime_error(what) {}
};

/// Training produced a non-finite loss or parameter.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace overlearn
