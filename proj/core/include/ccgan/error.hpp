#pragma once

#include <stdexcept>
#include <string>

namespace ccgan {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents do not line up for the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A forward or backward computation produced NaN/Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// API misuse, e.g. backward() on a non-scalar.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent architecture or run configuration (condition width, mode, unknown keys...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent dataset files.
class DataError : public Error {
 public:
  enum class Kind { kFormat, kMagic, kCountMismatch, kTruncated };

  explicit DataError(const std::string& what, Kind kind = Kind::kFormat)
      : Error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// Filesystem failures.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Training could not meet a stated floor (e.g. embedder accuracy).
class TrainingError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  enum class Kind { kHeader, kPayload, kVersion };

  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace ccgan
