#pragma once

#include <stdexcept>
#include <string>

namespace posebench {

// Base class for all domain errors surfaced by the toolkit. The CLI maps
// these to exit code 1; usage errors exit with 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Structural invariant violations (dangling references, bad parameter
// counts, non-unit quaternions). Models violating them are rejected,
// never repaired.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class DegenerateGeometryError : public Error {
 public:
  using Error::Error;
};

// Pipeline error carrying the stage that failed, e.g. "pair_selection".
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& message)
      : Error(stage + ": " + message), stage_(std::move(stage)) {}

  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

}  // namespace posebench
