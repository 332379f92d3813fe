#pragma once

#include <stdexcept>
#include <string>

namespace oex {

// Each error family maps onto one CLI exit code (2, 3, 4). Precondition
// violations on in-process calls are reported as std::invalid_argument.

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace oex
