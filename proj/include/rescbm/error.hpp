#pragma once

#include <stdexcept>
#include <string>

namespace rescbm {

/// Input or argument failed a documented precondition. Maps to CLI exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class FormatErrorKind {
  kBadMagic,
  kUnsupportedVersion,
  kTruncated,
  kSizeMismatch,
  kNonFinite,
  kNormalizationViolated,
  kDuplicateToken,
  kEmpty,
  kUnknownClass,
  kDuplicateSample,
  kMalformed,
};

const char* to_string(FormatErrorKind kind);

/// A file on disk does not match its declared format.
class FormatError : public std::runtime_error {
 public:
  FormatError(FormatErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  FormatErrorKind kind() const noexcept { return kind_; }

 private:
  FormatErrorKind kind_;
};

/// Filesystem failure (unreadable/unwritable path).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rescbm
