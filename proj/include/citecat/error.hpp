#pragma once

#include <stdexcept>
#include <string>

namespace citecat {

// Base error for anything raised by the library at run time.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad configuration, malformed input schema, unknown labels, missing paths.
// The CLI maps this to exit code 2; plain Error maps to exit code 1.
struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

}  // namespace citecat
