#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace xrhead {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or extents.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Input for which the operation is undefined (zero-norm vectors, all-zero features).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Dataset-level problems: too few samples, empty splits.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Class or sequence index outside its valid range.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary file; carries the byte offset where decoding failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace xrhead
