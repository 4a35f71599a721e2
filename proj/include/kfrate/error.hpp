#pragma once

#include <stdexcept>
#include <string>

namespace kfrate {

// Rejected input: dimension mismatch, ordering violation, bad config value.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A computation produced a non-finite result.
class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace kfrate
