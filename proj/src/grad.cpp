#include "synlik/grad.hpp"

#include <cmath>

namespace synlik {

LogDensity evaluate_checked(const LogDensityModel& model, const Vector& theta) {
  if (theta.size() != model.dim()) {
    throw Error(ErrorKind::DimensionMismatch, "theta length differs from model dimension");
  }
  if (!theta.allFinite()) throw Error(ErrorKind::InvalidArgument, "theta has non-finite entries");
  LogDensity out = model.evaluate(theta);
  if (!std::isfinite(out.value)) {
    throw Error(ErrorKind::NonFiniteDensity, "log density is not finite");
  }
  if (out.gradient.size() != model.dim() || !out.gradient.allFinite()) {
    throw Error(ErrorKind::NonFiniteDensity, "gradient is not finite or has wrong length");
  }
  return out;
}

FiniteDiffReport finite_diff_check(const LogDensityModel& model, const Vector& theta, double h) {
  if (!(h > 0.0)) throw Error(ErrorKind::InvalidArgument, "finite_diff_check: h must be positive");
  const LogDensity centre = evaluate_checked(model, theta);
  const int n = model.dim();

  FiniteDiffReport report;
  report.rel_error.assign(n, 0.0);
  report.clamp_active.assign(n, false);

  for (int i = 0; i < n; ++i) {
    const double step = h * (1.0 + std::abs(theta[i]));
    Vector plus = theta;
    Vector minus = theta;
    plus[i] += step;
    minus[i] -= step;
    const LogDensity up = evaluate_checked(model, plus);
    const LogDensity down = evaluate_checked(model, minus);
    if (up.branch_signature != centre.branch_signature ||
        down.branch_signature != centre.branch_signature) {
      report.clamp_active[i] = true;
      continue;
    }
    const double numeric = (up.value - down.value) / (2.0 * step);
    const double analytic = centre.gradient[i];
    const double err = std::abs(analytic - numeric) / (std::abs(analytic) + 1e-10);
    report.rel_error[i] = err;
    report.max_rel_error = std::max(report.max_rel_error, err);
    ++report.n_checked;
  }
  return report;
}

}  // namespace synlik
