#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace grail {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes; the message names both shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Out-of-range counts, bad enum names, invalid configuration.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Head reduction that does not respect grouped-query structure.
class GqaConstraintError : public ArgumentError {
 public:
  using ArgumentError::ArgumentError;
};

/// Failures of the numerical core. Carries the block index once known.
class NumericalError : public Error {
 public:
  using Error::Error;

  [[nodiscard]] std::optional<std::size_t> block() const { return block_; }
  void set_block(std::size_t block) { block_ = block; }

 private:
  std::optional<std::size_t> block_;
};

/// Symmetric factorization failed: the system is not positive definite.
class SingularError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Statistics carry no energy (all-dead channels) so nothing can be solved.
class DegenerateStatsError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class BadMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Manifest is malformed or disagrees with the tensor payload.
class ManifestError : public FormatError {
 public:
  using FormatError::FormatError;
};

class EmptyCalibrationError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace grail
