#pragma once

#include <stdexcept>
#include <string>

namespace longtail {

/// Invalid user-supplied configuration (bad boundaries, unknown method, ...).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent data on disk or in memory.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A computation produced a non-finite value.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace longtail
