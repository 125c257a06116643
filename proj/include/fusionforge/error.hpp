#pragma once

#include <stdexcept>
#include <string>

namespace fusionforge {

// Bad input: malformed files, shape mismatches, invalid options.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

// The computation itself failed (non-finite objective, diverging training).
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace fusionforge
