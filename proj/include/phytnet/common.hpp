#pragma once

#include <stdexcept>
#include <string>

namespace phytnet {

// Error taxonomy. Configuration errors are bad setups (shape mismatches,
// invalid config fields), data errors are bad inputs (labels out of range,
// undecodable files), usage errors are API misuse, numeric errors are
// non-finite values or failed factorizations, io errors are filesystem.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class Mode { kTrain, kEval };

enum class Activation { kRelu, kGelu };

inline std::string to_string(Activation a) {
  return a == Activation::kRelu ? "relu" : "gelu";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "gelu") return Activation::kGelu;
  throw ConfigError("unknown activation '" + s + "' (expected relu or gelu)");
}

}  // namespace phytnet
