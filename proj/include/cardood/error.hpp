#pragma once

#include <stdexcept>
#include <string>

namespace cardood {

/// Bad input data: malformed files, schema violations, infeasible generation
/// parameters. Maps to CLI exit code 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid arguments or configuration. Maps to CLI exit code 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Failure inside a training run. Maps to CLI exit code 3.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cardood
