#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace irtnet {

// Shape disagreement between operands. Programming or configuration error.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Anything wrong with external input: files, ids, request payloads.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public DataError {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : DataError(source + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class FormatError : public DataError {
 public:
  using DataError::DataError;
};

class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace irtnet
