#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mvglmm {

// Root of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Required input column missing.
class SchemaError : public Error {
 public:
  explicit SchemaError(const std::string& column)
      : Error("missing required column '" + column + "'"), column_(column) {}
  const std::string& column() const noexcept { return column_; }

 private:
  std::string column_;
};

// Unparseable cell. Row numbers are 1-based data rows (header excluded).
class ParseError : public Error {
 public:
  ParseError(std::size_t row, const std::string& what)
      : Error("row " + std::to_string(row) + ": " + what), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class LookupError : public Error {
 public:
  using Error::Error;
};

class UnavailableError : public Error {
 public:
  using Error::Error;
};

}  // namespace mvglmm
