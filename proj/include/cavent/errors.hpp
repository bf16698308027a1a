#pragma once

#include <stdexcept>
#include <string>

namespace cavent {

// Raised when a simulation produces a state that fails a physics sanity check
// (norm drift, trace drift, Fock truncation leakage). Distinct from
// std::invalid_argument, which signals bad inputs.
class PhysicsCheckError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TruncationError : public PhysicsCheckError {
 public:
  using PhysicsCheckError::PhysicsCheckError;
};

class IntegratorError : public PhysicsCheckError {
 public:
  using PhysicsCheckError::PhysicsCheckError;
};

}  // namespace cavent
