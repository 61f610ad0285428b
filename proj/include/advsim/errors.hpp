#pragma once

#include <stdexcept>
#include <string>

namespace advsim {

// Caller broke a documented precondition (dimension mismatch, missing cache...).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Invalid configuration value or unknown name.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Physics produced a non-finite state; the episode ends early.
class SimulationDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Hard stop of a training stage (empty data, divergent learner...).
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractViolation(message);
}

}  // namespace advsim
