#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace drift {

// Base for every error raised by the library. Callers that only care about
// "something in drift failed" catch this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Weight file or other binary input with a broken header.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Matrix/vector shapes (or payload lengths) disagree with declared dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

class NonFiniteError : public Error {
 public:
  using Error::Error;
};

// Argument outside the documented domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

// A row that should be a probability vector is not (negative entry, bad sum).
class InvalidDistributionError : public Error {
 public:
  using Error::Error;
};

class ContextOverflowError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class BackendError : public Error {
 public:
  using Error::Error;
};

class HypothesisError : public Error {
 public:
  using Error::Error;
};

// Dataset / JSONL schema violation. Carries the 1-based line number.
class SchemaError : public Error {
 public:
  SchemaError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace drift
