#ifndef CBDB_ERRORS_HPP_
#define CBDB_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace cbdb {

// Shapes of two operands do not conform.
class DimensionError : public std::invalid_argument {
 public:
  explicit DimensionError(const std::string& what) : std::invalid_argument(what) {}
};

// Invalid configuration or precondition on parameters (bad m, rates, keys...).
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

// NaN/Inf where finite values are required.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// A loss was asked for on a batch with no usable (anchor, positive, negative).
class DegenerateBatchError : public std::runtime_error {
 public:
  explicit DegenerateBatchError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace cbdb

#endif  // CBDB_ERRORS_HPP_
