#pragma once

#include <stdexcept>

namespace nrt {

/// Operand extents do not line up.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Out-of-range class or element index.
class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// API used outside its contract (e.g. backward on a non-scalar).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Inconsistent construction parameters (architecture, missing inputs).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A value outside its documented domain.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace nrt
