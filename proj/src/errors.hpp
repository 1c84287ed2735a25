#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace geoloc {

// Error taxonomy shared by the core, the C API (status codes) and the CLI
// (exit codes). Every throw site uses one of these so callers can map
// failures without string matching.

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class InvalidArgumentError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  ConfigError(const std::string& msg, int line = 0) : Error(msg), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

class MissingArtifactError : public Error {
 public:
  using Error::Error;
};

// Binary format violations carry the byte offset where decoding failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& msg, std::size_t offset)
      : Error(msg + " (byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class CoverageError : public Error {
 public:
  using Error::Error;
};

class CapacityError : public Error {
 public:
  using Error::Error;
};

class CalibrationError : public Error {
 public:
  using Error::Error;
};

}  // namespace geoloc
