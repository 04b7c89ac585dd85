// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace xmodal {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A vector that must be normalized has (numerically) zero length.
class DegenerateError : public Error {
 public:
  using Error::Error;
};

/// An argument is outside its documented domain.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// The dataset cannot support the requested pair-generation protocol.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// A scalar objective evaluated to NaN or infinity.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergedError : public Error {
 public:
  DivergedError(std::size_t epoch, std::size_t batch, const std::string& what)
      : Error(what), epoch_(epoch), batch_(batch) {}
  std::size_t epoch() const { return epoch_; }
  std::size_t batch() const { return batch_; }

 private:
  std::size_t epoch_;
  std::size_t batch_;
};

/// A binary file is malformed. `offset()` is the byte position at which
/// decoding failed.
class FormatError : public Error {
 public:
  FormatError(std::uint64_t offset, const std::string& what)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset),
        detail_(what) {}
  std::uint64_t offset() const { return offset_; }
  /// Message without the offset suffix.
  const std::string& detail() const { return detail_; }

 private:
  std::uint64_t offset_;
  std::string detail_;
};

enum class ViolationKind {
  kMalformedJson,
  kMissingField,
  kWrongType,
  kBadGridShape,
  kUnknownClass,
  kBadLabelCount,
  kDuplicateLabel,
  kDuplicateId,
  kDanglingPath,
  kUnknownQueryRef,
};

const char* to_string(ViolationKind kind);

struct Violation {
  ViolationKind kind;
  std::string message;
};

/// Manifest validation failed; carries every violation found, not just the
/// first.
class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<Violation> violations);
  const std::vector<Violation>& violations() const { return violations_; }
  bool has(ViolationKind kind) const;

 private:
  std::vector<Violation> violations_;
};

}  // namespace xmodal
