#pragma once

#include <stdexcept>
#include <string>

namespace aeail {

// Input vectors or matrices whose dimensions disagree with a network,
// normalizer or environment.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite values reached an optimizer, a dynamics step or a loss.
// Runs abort on these instead of clamping.
class NumericFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed or missing files, empty demonstration sets and similar.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace aeail
