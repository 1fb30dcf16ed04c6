#pragma once

#include <stdexcept>
#include <string>

namespace carbrec {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Fewer than two real glucose samples, or no glucose records at all.
class EmptyStreamError : public Error {
 public:
  using Error::Error;
};

/// Invalid or degenerate configuration (scaling ranges, hyper-parameters, JSON config).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input record. `locator()` names the line or element that failed.
class ParseError : public Error {
 public:
  ParseError(std::string locator, const std::string& what)
      : Error(locator + ": " + what), locator_(std::move(locator)) {}
  const std::string& locator() const noexcept { return locator_; }

 private:
  std::string locator_;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class SplitError : public Error {
 public:
  using Error::Error;
};

class FitError : public Error {
 public:
  using Error::Error;
};

/// Tensor shapes do not agree for an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Caller violated an API contract (e.g. backward from a non-scalar node).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// An inference query is malformed (bad horizon, missing history, ...).
class QueryError : public Error {
 public:
  using Error::Error;
};

}  // namespace carbrec
