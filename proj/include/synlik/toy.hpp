#pragma once

#include <cstdint>
#include <optional>
#include <string_view>

#include "synlik/bsl.hpp"
#include "synlik/grad.hpp"

namespace synlik {

// n iid Normal(mu, sigma^2) values of which only the first m are observed,
// plus the proportion of all n exceeding the threshold c.
struct ToyData {
  Vector y_obs;                 // m observed values
  std::optional<Vector> y_full; // all n values, needed by the oracle variant only
  int n = 0;
  int m = 0;
  double c = 2.0;
  double s_obs = 0.0;
  double sigma = 1.0;
  double prior_mean = 0.0;
  double prior_sd = 10.0;

  int observed_exceedances() const;
  void validate() const;
};

ToyData simulate_toy(int n, int m, double mu, double sigma, double c, std::uint64_t seed);

enum class ToyVariant { Oracle, Simple, BslIndividual, BslContinuous };

std::string_view to_string(ToyVariant v);
ToyVariant parse_toy_variant(std::string_view name);

// 1 - Phi((c - mu) / sigma)
double toy_exceedance_prob(double mu, double sigma, double c);

// Log posterior of mu and its derivative. BslIndividual imputes
// y = mu + sigma * Z and counts exceedances, which is piecewise constant in
// mu: its synthetic term contributes zero to the gradient. BslContinuous
// replaces the exceedance count by the clamped normal relaxation driven by
// crn.W.
LogDensity toy_logposterior(ToyVariant variant, const ToyData& data, const CrnStore& crn, double mu);

class ToyModel final : public LogDensityModel {
 public:
  ToyModel(ToyVariant variant, ToyData data, CrnStore crn);

  int dim() const override { return 1; }
  LogDensity evaluate(const Vector& theta) const override;

  const ToyData& data() const { return data_; }
  const CrnStore& crn() const { return crn_; }
  ToyVariant variant() const { return variant_; }

 private:
  ToyVariant variant_;
  ToyData data_;
  CrnStore crn_;
};

// CRN sized for both BSL variants of the toy model.
CrnStore toy_crn(const ToyData& data, int B, std::uint64_t seed);

// Synthetic term of the BslContinuous posterior (l_cont).
double toy_continuous_synth_loglik(const ToyData& data, const CrnStore& crn, double mu);

// Exact binomial imputation state for the discrete synthetic likelihood.
DiscreteState toy_discrete_state(const ToyData& data, double mu);

LikelihoodPair toy_likelihood_pair(const ToyData& data, const CrnStore& crn, double mu, int B_disc,
                                   const RngStream& rng);

struct NormalPosterior {
  double mean = 0.0;
  double sd = 0.0;
};

// Conjugate normal-normal posterior of mu given values with known sigma.
NormalPosterior toy_conjugate_posterior(const ToyData& data, const Vector& values);

}  // namespace synlik
