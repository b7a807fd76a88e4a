#pragma once

#include <stdexcept>
#include <string>

namespace ivlate {

// Base of every error raised by the library. The CLI maps ConfigError to
// exit status 2 and every other Error to exit status 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user input: missing columns, malformed options, invalid specs.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Data violates a structural precondition (e.g. non-binary instrument).
class DomainError : public Error {
 public:
  using Error::Error;
};

class EmptyDataError : public DomainError {
 public:
  using DomainError::DomainError;
};

// The target parameter is not identified on the supplied data.
class IdentificationError : public DomainError {
 public:
  using DomainError::DomainError;
};

class RankError : public DomainError {
 public:
  using DomainError::DomainError;
};

class SeparationError : public DomainError {
 public:
  using DomainError::DomainError;
};

class ConvergenceError : public DomainError {
 public:
  using DomainError::DomainError;
};

// A leave-one-out step hit an observation with leverage one.
class LeverageError : public DomainError {
 public:
  using DomainError::DomainError;
};

class TrimError : public DomainError {
 public:
  using DomainError::DomainError;
};

class TestUndefinedError : public DomainError {
 public:
  using DomainError::DomainError;
};

}  // namespace ivlate
