#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "synlik/bsl.hpp"
#include "synlik/mathcore.hpp"

namespace synlik {

// Pareto k-hat below this value indicates reliable importance sampling.
inline constexpr double kKhatReliable = 0.7;
// Below this value the tail is benign.
inline constexpr double kKhatGood = 0.5;
inline constexpr int kMinPsisDraws = 25;

struct PsisResult {
  Vector log_weights_smoothed;  // normalized so that the largest is 0
  std::optional<double> k_hat;  // empty when the tail has zero variance
  double n_eff = 0.0;
  int tail_size = 0;

  Vector normalized_weights() const;  // sums to 1
};

// l_disc - l_cont per draw. Throws NonFiniteWeight on any non-finite pair.
Vector raw_log_weights(std::span<const LikelihoodPair> pairs);

struct GpdFit {
  double k = 0.0;
  double sigma = 0.0;
};

// Zhang & Stephens profile fit of a generalized Pareto distribution to
// positive exceedances, with the weakly informative shrinkage of k toward 0.5
// used by PSIS. Returns nullopt when all exceedances are equal.
std::optional<GpdFit> fit_gpd(std::span<const double> exceedances);

// Quantile function of GPD(k, sigma) at probability p.
double gpd_quantile(double p, double k, double sigma);

// Pareto-smoothed importance sampling over pooled draws.
PsisResult psis_smooth(const Vector& log_weights);

struct WeightedEstimate {
  double estimate = 0.0;
  double mc_se = 0.0;
};

// Self-normalized importance sampling estimate of E[f(theta)], with a Monte
// Carlo standard error from the weighted variance.
WeightedEstimate reweighted_estimate(const Matrix& draws, const PsisResult& result,
                                     const std::function<double(const Vector&)>& f);

// p-quantile of values under normalized weights (linear interpolation of the
// weighted empirical CDF at the midpoints of each draw's weight mass).
double weighted_quantile(std::span<const double> values, std::span<const double> weights, double p);

}  // namespace synlik
