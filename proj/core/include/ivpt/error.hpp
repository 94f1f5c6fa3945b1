#pragma once

#include <stdexcept>
#include <string>

namespace ivpt {

// Shapes of operands do not agree.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A caller violated an operation's precondition (non-scalar loss, k > M, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Overflow, NaN or Inf produced from finite inputs.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid user configuration (unknown key, out-of-range value).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Filesystem or format problems when reading/writing artifacts.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ivpt
