#pragma once

#include <stdexcept>
#include <string>

namespace ddprune {

// Shapes or lengths that do not line up.
class StructuralError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An argument outside its documented domain (label out of range, lambda <= 0, ...).
class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// NaN or Inf produced during a computation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad magic, version or truncated payload in a persisted file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid or inconsistent run configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A file that cannot be opened or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ddprune
