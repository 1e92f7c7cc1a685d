#pragma once

#include <stdexcept>
#include <string>

namespace dsat {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not compose (rank, extent or channel mismatch).
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A configuration that cannot produce a valid network or data set.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A caller violated an operation's precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A checkpoint manifest that does not match the model it is loaded into.
class ManifestError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values where finite ones are required (loss, gradients).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace dsat
