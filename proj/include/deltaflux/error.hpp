#pragma once

#include <stdexcept>
#include <string>

namespace deltaflux {

// Error taxonomy. The CLI maps each class onto a distinct exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or layer dimensions disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Malformed model/run configuration or an out-of-range option.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// File could not be opened, was truncated, or carried the wrong magic.
class IoError : public Error {
 public:
  using Error::Error;
};

// A caller broke an operation precondition (e.g. sparsity outside [0,1]).
class ContractError : public Error {
 public:
  using Error::Error;
};

}  // namespace deltaflux
