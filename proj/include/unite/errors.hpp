#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace unite {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes or extents that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A NaN or infinity produced or detected somewhere it must not be.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or argument values.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Problems with input data: manifests, missing files, degenerate label sets.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary file. Carries the byte offset where parsing stopped.
class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::uint64_t offset)
      : DataError(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace unite
