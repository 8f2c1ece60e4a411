#pragma once

#include <stdexcept>
#include <string>

namespace kglp {

/// Violated precondition of a library call (shape mismatch, bad id, misuse).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Invalid run configuration or command-line override.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data (triple files, checkpoints, splits).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training diverged or otherwise could not continue.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace kglp
