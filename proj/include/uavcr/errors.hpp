#pragma once

#include <stdexcept>
#include <string>

namespace uavcr {

// Invalid argument or out-of-range input to a pure function.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Operation called in a state that does not allow it (stepping a finished
// episode, sampling an underfull buffer).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A proposed intruder geometry was rejected; the caller resamples.
class RejectedGeometry : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad command line or configuration. Maps to exit code 2 in the CLI.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace uavcr
