#pragma once

#include <stdexcept>
#include <string>

namespace pacdiff {

// Base of every error the library throws. The CLI maps IoError to exit code 1
// and everything else to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NonFiniteError : public Error {
 public:
  using Error::Error;
};

// Calling things in the wrong order (backward before forward, ...).
class UsageError : public Error {
 public:
  using Error::Error;
};

// Violated preconditions on arguments (empty dataset, non-scalar root, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class IntegrityError : public Error {
 public:
  using Error::Error;
};

class VersionError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// A training stage gave up; carries the stage label.
class TrainingAbort : public Error {
 public:
  TrainingAbort(std::string stage, const std::string& what)
      : Error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

}  // namespace pacdiff
