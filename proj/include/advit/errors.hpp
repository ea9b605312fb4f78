#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace advit {

// Shape or size disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A caller violated a documented precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Input data is malformed (e.g. a label row that is not a distribution).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A NaN or Inf appeared where finite values are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A dataset file could not be read or is malformed.
class DataError : public std::runtime_error {
 public:
  enum class Kind { io, magic, truncated, bad_label, invalid_header };

  DataError(Kind kind, std::uint64_t offset, const std::string& what)
      : std::runtime_error(what), kind_(kind), offset_(offset) {}

  Kind kind() const { return kind_; }
  /// Byte offset in the file where the problem was detected.
  std::uint64_t offset() const { return offset_; }

 private:
  Kind kind_;
  std::uint64_t offset_;
};

// A checkpoint file could not be read, is corrupt, or does not fit the model.
class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { io, magic, version, truncated, checksum, malformed, shape_mismatch };

  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

}  // namespace advit
