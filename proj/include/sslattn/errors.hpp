#pragma once

#include <stdexcept>
#include <string>

namespace sslattn {

// Invalid or inconsistent configuration (bad shapes, N < K_c, unknown keys).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Missing dataset, unreadable image, incomplete memory bank.
class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite losses or values that make a training step meaningless.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Checkpoint or artifact that cannot be read or has the wrong format tag.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sslattn
