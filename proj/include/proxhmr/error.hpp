#pragma once

#include <stdexcept>
#include <string>

namespace proxhmr {

// Raised when a public entry point receives parameters that violate its
// documented invariants (non-finite values, out-of-limit joints, bad shapes).
class InvalidInput : public std::invalid_argument {
 public:
  explicit InvalidInput(const std::string& what) : std::invalid_argument(what) {}
};

// Raised by the loaders when a file cannot be parsed or has the wrong schema.
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace proxhmr
