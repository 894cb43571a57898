#pragma once

#include <stdexcept>
#include <string>

namespace twinsight {

// Raised when a value leaves the finite range (NaN/Inf) or an embedding
// degenerates to (near) zero norm. The CLI maps this to exit code 3.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised on invalid configuration files or CLI arguments. Exit code 2.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace twinsight
