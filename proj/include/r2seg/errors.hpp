#pragma once

#include <stdexcept>

namespace r2seg {

// The CLI maps these onto exit codes: ConfigError -> 1, DataError and
// FormatError -> 2, NumericError -> 3.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct VersionError : FormatError {
  using FormatError::FormatError;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace r2seg
