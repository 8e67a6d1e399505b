#pragma once

#include <stdexcept>
#include <string>

namespace msgv {

// Raised for malformed configs, unknown keys, bad CLI usage. CLI exit code 2.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Raised when a computation produces non-finite values. CLI exit code 3.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// Raised for file I/O and serialization failures. CLI exit code 4.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace msgv
