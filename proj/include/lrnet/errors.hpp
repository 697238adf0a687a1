#pragma once

#include <stdexcept>
#include <string>

namespace lrnet {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid hyperparameters or configuration files. CLI exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent dataset files. CLI exit code 3.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Operations called out of order, e.g. backward without a cached forward.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint files that cannot be read back (bad magic, version, checksum, truncation).
class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// A checkpoint whose network layout does not match the receiving network.
class TopologyError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

/// Non-finite loss during training. CLI exit code 4.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int layer_index)
      : Error(what), layer_index_(layer_index) {}

  /// Index of the first layer whose output was non-finite; equals the layer
  /// count when all activations were finite and the loss itself overflowed.
  int layer_index() const noexcept { return layer_index_; }

 private:
  int layer_index_;
};

}  // namespace lrnet
