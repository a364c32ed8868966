#pragma once

#include <stdexcept>
#include <string>

namespace gateformer {

// Every failure raised by the library derives from Error so callers can catch
// one type; the subclasses let the CLI map failures to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not satisfy an op's contract.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error("shape: " + what) {}
};

/// Invalid or inconsistent configuration (model, training, split, CLI keys).
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config: " + what) {}
};

/// Malformed input text (CSV, key=value files).
class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what) : Error("parse: " + what) {}
};

/// Binary checkpoint is unreadable or inconsistent with its embedded config.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error("format: " + what) {}
};

/// A NaN or Inf was produced; the message names the op that produced it.
class NonFiniteError : public Error {
 public:
  explicit NonFiniteError(const std::string& what) : Error("non-finite: " + what) {}
};

/// API misuse, e.g. backward() on a non-scalar.
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error("usage: " + what) {}
};

/// Filesystem failures.
class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("io: " + what) {}
};

}  // namespace gateformer
