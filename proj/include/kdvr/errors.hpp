#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace kdvr {

/// Precondition on a caller-supplied value failed (sizes, ranges, shapes).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A ratio whose denominator vanished (zero second moment, zero variance).
class UndefinedRatio : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Operation not defined for this objective kind.
class InvalidKind : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A required cached quantity was absent or stale.
class PreconditionError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed input file. `offset` is a byte offset (IDX) or a 1-based row
/// (CSV); `column` is 0 when not applicable.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset, std::size_t column = 0)
      : std::runtime_error(what), offset_(offset), column_(column) {}
  std::size_t offset() const noexcept { return offset_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t offset_;
  std::size_t column_;
};

/// A loaded or generated dataset had no samples.
class EmptyDataset : public FormatError {
 public:
  explicit EmptyDataset(const std::string& what) : FormatError(what, 0) {}
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& field, const std::string& what)
      : std::runtime_error(field + ": " + what), field_(field) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Declared problem constants were contradicted by a witness point.
class ConstantsInvalid : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace kdvr
