#pragma once

#include <stdexcept>
#include <string>

namespace lex {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Precondition of an operation violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid or inconsistent configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed file. `line` is 1-based, 0 when not applicable.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0, std::string field = {})
      : Error(format(what, line, field)), line_(line), field_(std::move(field)) {}

  std::size_t line() const noexcept { return line_; }
  const std::string& field() const noexcept { return field_; }

 private:
  static std::string format(const std::string& what, std::size_t line, const std::string& field) {
    std::string msg = what;
    if (line > 0) msg += " (line " + std::to_string(line);
    if (!field.empty()) msg += (line > 0 ? ", field " : " (field ") + field;
    if (line > 0 || !field.empty()) msg += ")";
    return msg;
  }

  std::size_t line_;
  std::string field_;
};

/// Object used before it was fitted/initialized.
class StateError : public Error {
 public:
  using Error::Error;
};

/// Non-finite value encountered where a finite one is required.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Requested mode exceeds what the implementation supports (e.g. enumeration size).
class CapabilityError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace lex
