#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "synlik/grad.hpp"
#include "synlik/mathcore.hpp"

namespace synlik {

struct HmcConfig {
  int n_chains = 4;
  int n_warmup = 1000;
  int n_sampling = 1000;
  double target_accept = 0.8;
  int max_leapfrog_steps = 64;
  double init_radius = 2.0;
  std::uint64_t seed = 1;
  int threads = 0;  // 0 means one thread per chain

  void validate() const;
};

struct ChainDraws {
  Matrix draws;  // n_sampling x dim
  std::vector<double> accept_stats;
  std::vector<char> divergence_flags;
  std::vector<double> log_density;
  double stepsize = 0.0;
  Vector mass_diag;
  long grad_evals = 0;

  int n_divergent() const;
};

inline constexpr double kDivergenceThreshold = 1000.0;

struct LeapfrogResult {
  Vector theta;
  Vector momentum;
  double energy_error = 0.0;  // H(end) - H(start)
  bool divergent = false;
  LogDensity end;
  int grad_evals = 0;
};

// n_steps leapfrog steps of the Hamiltonian
//   H(theta, p) = -log pi(theta) + 0.5 * sum_i p_i^2 / mass_diag_i.
// A non-finite density along the path or an energy increase above
// kDivergenceThreshold marks the trajectory divergent.
LeapfrogResult leapfrog(const LogDensityModel& model, const Vector& theta, const Vector& momentum,
                        double stepsize, int n_steps, const Vector& mass_diag);

// Same, reusing an already computed density at the start point.
LeapfrogResult leapfrog(const LogDensityModel& model, const Vector& theta, const LogDensity& start,
                        const Vector& momentum, double stepsize, int n_steps,
                        const Vector& mass_diag);

// Jittered static HMC. Warmup runs in two halves: dual-averaging step size
// adaptation under a unit metric, then a diagonal metric estimated from the
// second quarter of warmup with a fresh step size adaptation. Throws
// AllDivergent when more than half of a chain's retained draws diverged.
std::vector<ChainDraws> run_chains(const LogDensityModel& model, const HmcConfig& config);

// One chain; exposed for tests that need to look inside a single run.
ChainDraws run_chain(const LogDensityModel& model, const HmcConfig& config, int chain_index);

struct RhatResult {
  double value = 1.0;  // +infinity when chains sit at distinct constants
  bool zero_variance = false;
};

// Split-chain potential scale reduction factor.
RhatResult rhat(std::span<const Vector> chains);
RhatResult rhat(const std::vector<ChainDraws>& chains, int param);

// Rank-normalized split-chain bulk effective sample size.
double ess(std::span<const Vector> chains);
double ess(const std::vector<ChainDraws>& chains, int param);

std::vector<Vector> chain_columns(const std::vector<ChainDraws>& chains, int param);

// Draws of every chain stacked in chain order.
Matrix pooled_draws(const std::vector<ChainDraws>& chains);

struct PosteriorSummary {
  double mean = 0.0;
  double sd = 0.0;
  double q025 = 0.0;
  double q500 = 0.0;
  double q975 = 0.0;
};

PosteriorSummary summarize(std::span<const double> values);

}  // namespace synlik
