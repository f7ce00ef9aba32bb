#pragma once

#include <cstdint>
#include <vector>

#include "synlik/mathcore.hpp"

namespace synlik {

struct LogDensity {
  double value = 0.0;
  Vector gradient;
  // Fingerprint of which piecewise branches (clamps, indicators, jitter
  // levels) were taken. Zero when the model has no such branches. Two
  // evaluations with the same signature lie on the same smooth piece.
  std::uint64_t branch_signature = 0;
};

// Differentiable log density on an unconstrained parameter vector.
// Implementations must be immutable after construction: evaluate() may be
// called concurrently from several chains.
class LogDensityModel {
 public:
  virtual ~LogDensityModel() = default;

  virtual int dim() const = 0;

  // Value and exact gradient. Throws Error(NonFiniteDensity) when the value
  // is not representable; the sampler treats that as a divergence.
  virtual LogDensity evaluate(const Vector& theta) const = 0;
};

// Checks theta's shape and that evaluate() produced a finite value with a
// gradient of the right length.
LogDensity evaluate_checked(const LogDensityModel& model, const Vector& theta);

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  std::vector<double> rel_error;   // per coordinate, 0 where skipped
  std::vector<bool> clamp_active;  // stencil crossed a branch boundary
  int n_checked = 0;
};

// Central differences with per-coordinate step h * (1 + |theta_i|). A
// coordinate whose stencil lands on a different branch (see
// LogDensity::branch_signature) is flagged and excluded from the maximum.
FiniteDiffReport finite_diff_check(const LogDensityModel& model, const Vector& theta,
                                   double h = 1e-5);

}  // namespace synlik
