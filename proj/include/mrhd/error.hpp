#pragma once

#include <stdexcept>
#include <string>

namespace mrhd {

// Root of every error the library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes or invalid axes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A caller broke a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Malformed binary feature or checkpoint file.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Annotation record violates a data invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Missing file or unreadable dataset component.
class LoadError : public Error {
 public:
  using Error::Error;
};

// Inconsistent or degenerate configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Training diverged (non-finite loss).
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace mrhd
