// errors.hpp -- exception types used across the library.
#pragma once

#include <stdexcept>
#include <string>

namespace modunfold {

// Bad user-supplied configuration (CLI flags, config files, constructor args).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Operation applied to a state object that is not ready for it.
struct StateError : std::logic_error {
  explicit StateError(const std::string& msg) : std::logic_error(msg) {}
};

// Numerical breakdown (non-finite values, singular systems past repair).
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace modunfold
