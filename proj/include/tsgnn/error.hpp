#pragma once

#include <stdexcept>
#include <string>

namespace tsgnn {

// Bad argument shapes, invalid configuration values.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input outside the domain an operation is defined on (empty sets, n < 10, ...).
class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller broke a precondition of the API.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed file contents; message carries file and line when known.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace tsgnn
