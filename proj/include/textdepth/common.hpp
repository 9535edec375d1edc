// Shared error types and small utilities.
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace textdepth {

// Error taxonomy maps onto CLI exit codes: config=2, data=3, numeric=4.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape mismatches are misconfigurations of the call, not bad data.
struct ShapeError : ConfigError {
  explicit ShapeError(const std::string& msg) : ConfigError(msg) {}
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

}  // namespace textdepth
