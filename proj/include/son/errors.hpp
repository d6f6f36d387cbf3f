#ifndef SON_ERRORS_HPP
#define SON_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace son {

/// Shape or dimension mismatch between tensors, specs, or parameters.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Violated call contract (mismatched caches, empty stacks, bad arguments).
class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

/// Invalid or inconsistent configuration (unknown preset, bad field value).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numeric failure: non-finite state, divergence, factorization breakdown.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Query point outside the operator's output domain.
class DomainError : public std::runtime_error {
 public:
  explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Filesystem / serialization failure.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace son

#endif  // SON_ERRORS_HPP
