#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace polarloc {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid shapes, sizes, hyperparameters or CLI options.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed binary or text input. `offset` is the byte (or line) position
// where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// A vector whose norm is too small to normalise.
class DegenerateVectorError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf encountered during a forward or training pass.
class NumericError : public Error {
 public:
  using Error::Error;
};

class QueryError : public Error {
 public:
  using Error::Error;
};

class SamplingExhaustedError : public Error {
 public:
  using Error::Error;
};

class EvaluationError : public Error {
 public:
  using Error::Error;
};

}  // namespace polarloc
