#pragma once

#include <stdexcept>
#include <string>

namespace bocpdms {

// Invalid user-supplied value (hyperparameter, option, dimension).
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Operation called in the wrong lifecycle state, or a broken internal contract.
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Factorisation failure or non-finite result that survived the jitter retry.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file; carries the 1-based row/column when known (0 = n/a).
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& message, std::size_t row = 0, std::size_t column = 0)
      : std::runtime_error(message), row_(row), column_(column) {}
  std::size_t row() const noexcept { return row_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t row_;
  std::size_t column_;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace bocpdms
