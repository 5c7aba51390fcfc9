#pragma once

#include <stdexcept>
#include <string>

namespace cbcnn {

// Error taxonomy mirrored by the CLI exit codes:
//   usage error -> 2, data error -> 3, numeric error -> 4.
// Dimension mismatches are a species of data error at the CLI boundary.

struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DimensionError : DataError {
  explicit DimensionError(const std::string& msg) : DataError(msg) {}
};

struct ConfigError : UsageError {
  explicit ConfigError(const std::string& msg) : UsageError(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace cbcnn
