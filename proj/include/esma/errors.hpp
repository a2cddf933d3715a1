#pragma once

#include <stdexcept>

namespace esma {

/// An argument violates an operation's precondition (shape, range, label).
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A configuration is unusable (batch larger than dataset, q out of range, ...).
class InvalidConfig : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A local neighborhood query found no same-class samples.
class EmptyNeighborhood : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Optimization produced a non-finite loss.
class TrainingFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checkpoint or data file could not be parsed.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace esma
