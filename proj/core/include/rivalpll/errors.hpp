#pragma once

#include <stdexcept>

namespace rivalpll {

// Bad argument or violated structural invariant (shapes, ranges, stochasticity).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A matrix that must have full column rank for recovery/identifiability does not.
class RankDeficiencyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed file content; the message names the offending line where known.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rivalpll
