#pragma once

#include <stdexcept>
#include <string>

namespace promos {

// Bad input: malformed files, inconsistent shapes, invalid config. Maps to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN/Inf produced during a forward or backward pass.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Checkpoint container problems (bad magic, version mismatch, missing tensor).
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace promos
