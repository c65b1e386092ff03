#pragma once

#include <stdexcept>
#include <string>

namespace pushbox {

// Base class for every failure the library can raise on valid-but-hard inputs.
// Input validation issues use std::invalid_argument instead.
class SolverError : public std::runtime_error {
 public:
  explicit SolverError(const std::string& msg) : std::runtime_error(msg) {}
};

// A pair of interaction points coincide, so no unit direction exists.
class DegenerateDirection : public SolverError {
 public:
  explicit DegenerateDirection(const std::string& msg) : SolverError(msg) {}
};

// The damped Newton loop ran out of iterations before meeting tolerance.
class MaxIterationsExceeded : public SolverError {
 public:
  explicit MaxIterationsExceeded(const std::string& msg) : SolverError(msg) {}
};

// A NaN or Inf appeared in an iterate or residual.
class NonFiniteIterate : public SolverError {
 public:
  explicit NonFiniteIterate(const std::string& msg) : SolverError(msg) {}
};

// The step Jacobian is rank-deficient; sensitivities are not defined.
class SingularJacobian : public SolverError {
 public:
  explicit SingularJacobian(const std::string& msg) : SolverError(msg) {}
};

// A control-Hessian factorization failed; handled internally by raising the
// regularization, surfaced only if that also fails.
class NotPositiveDefinite : public SolverError {
 public:
  explicit NotPositiveDefinite(const std::string& msg) : SolverError(msg) {}
};

// Regularization climbed past its ceiling without producing an acceptable
// step.
class RegularizationExhausted : public SolverError {
 public:
  explicit RegularizationExhausted(const std::string& msg) : SolverError(msg) {}
};

// Two metric reports refer to different goals and cannot be compared.
class GoalMismatch : public std::invalid_argument {
 public:
  explicit GoalMismatch(const std::string& msg) : std::invalid_argument(msg) {}
};

// A serialized artifact does not match the expected schema.
class SchemaMismatch : public std::runtime_error {
 public:
  explicit SchemaMismatch(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace pushbox
