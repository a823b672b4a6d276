#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace acpolicy {

// Base of every error raised by the library. Callers that only need to
// report a failure can catch this; the subclasses exist so the CLI and the
// HTTP layer can map failures to exit codes and status codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what, std::string field = {})
      : Error(what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class ConstraintViolation : public Error {
 public:
  using Error::Error;
};

class OutcomeNotFeasible : public Error {
 public:
  using Error::Error;
};

class DegenerateGroup : public Error {
 public:
  using Error::Error;
};

class PriorNotInitialized : public Error {
 public:
  using Error::Error;
};

class StateSpaceOverflow : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class IncompleteTable : public Error {
 public:
  using Error::Error;
};

// Session protocol errors.
class LateReport : public Error {
 public:
  using Error::Error;
};

class MembershipError : public Error {
 public:
  using Error::Error;
};

class RoundStateError : public Error {
 public:
  using Error::Error;
};

class ReplayError : public Error {
 public:
  ReplayError(const std::string& what, std::uint64_t sequence)
      : Error(what), sequence_(sequence) {}
  std::uint64_t sequence() const noexcept { return sequence_; }

 private:
  std::uint64_t sequence_;
};

}  // namespace acpolicy
