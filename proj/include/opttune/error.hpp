#pragma once

#include <stdexcept>
#include <string>

namespace opttune {

/// Base class for all domain errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A document could not be read or does not follow its grammar.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0, std::size_t column = 0)
      : Error(line ? what + " (line " + std::to_string(line) + ", column " + std::to_string(column) + ")" : what),
        line_(line),
        column_(column) {}

  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

/// A well-formed document carries a value that violates an invariant.
/// `subject()` names the offending parameter, key or rule.
class ValidationError : public Error {
 public:
  ValidationError(std::string subject, const std::string& what)
      : Error(subject.empty() ? what : subject + ": " + what), subject_(std::move(subject)) {}

  const std::string& subject() const { return subject_; }

 private:
  std::string subject_;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

/// Requested lifecycle transition is not allowed from the current state.
class TransitionError : public Error {
 public:
  using Error::Error;
};

}  // namespace opttune
