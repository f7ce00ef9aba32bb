#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "synlik/mathcore.hpp"

namespace synlik {

inline constexpr int kDefaultToyB = 25;
inline constexpr int kDefaultNmrB = 500;
inline constexpr int kMaxJitterEscalations = 6;

// Randomness drawn once before sampling and reused by every density
// evaluation, so the synthetic likelihood is a deterministic function of the
// parameters.
struct CrnStore {
  Matrix Z;  // B x n_missing, individual-level imputation normals
  Matrix W;  // B x n_relaxation, relaxation normals
  int B = 0;
  std::uint64_t seed = 0;

  static CrnStore draw(int B, int n_missing, int n_relaxation, std::uint64_t seed);
};

struct SyntheticMoments {
  Vector mean;
  Matrix cov;  // includes the applied jitter on the diagonal
  double jitter_applied = 0.0;
  int jitter_level = 0;  // number of x10 escalations beyond the base jitter
  bool zero_variance_summary = false;
  bool small_b = false;  // B < D + 2
  Eigen::LLT<Matrix> chol;
};

struct LikelihoodPair {
  double l_cont = 0.0;
  double l_disc = 0.0;
};

// clamp(total*p + sqrt(total*p*(1-p))*w, 0, total)
double relax_binomial(double total, double p, double w);

struct RelaxedBinomial {
  double value = 0.0;
  double d_total = 0.0;
  double d_p = 0.0;
  bool clamped = false;
};

// relax_binomial with its partial derivatives. Inside the clamp interval the
// derivatives are exact; at the upper clamp the value equals total (d_total =
// 1), at the lower clamp it is constant.
RelaxedBinomial relax_binomial_partials(double total, double p, double w);

// Sequential conditional normal approximation of Multinomial(total, probs):
// category k takes relax_binomial(remaining, probs_k / remaining_mass, w_k)
// and the last category receives the remainder. w has length K - 1.
Vector relax_multinomial_sequential(double total, std::span<const double> probs,
                                    std::span<const double> w);

// Reusable forward/backward workspace for the sequential relaxation. The
// forward pass records what the reverse pass needs; backward() adds
// d(loss)/d(probs) into prob_adjoint given d(loss)/d(counts).
class SequentialRelaxation {
 public:
  void forward(double total, std::span<const double> probs, std::span<const double> w,
               std::span<double> counts);
  void backward(std::span<const double> count_adjoint, std::span<double> prob_adjoint) const;

  // Number of categories whose value hit a clamp bound in the last forward
  // pass, and a rolling hash of which ones.
  int n_clamped() const { return n_clamped_; }
  std::uint64_t clamp_hash() const { return clamp_hash_; }

 private:
  std::vector<double> probs_, mass_, q_, d_remaining_, d_q_;
  std::vector<char> q_saturated_;
  int n_clamped_ = 0;
  std::uint64_t clamp_hash_ = 0;
};

// Sample mean and unbiased covariance of B synthetic summary vectors (rows),
// with diagonal jitter base * 10^level, base = 1e-8 * trace / D (1e-8 when
// the trace is zero), escalated until Cholesky succeeds.
SyntheticMoments synth_moments(const Matrix& summaries);

// MVN(s_obs | moments.mean, moments.cov).
double continuous_synth_loglik(const Vector& s_obs, const SyntheticMoments& moments);

struct SynthLoglikGradient {
  double value = 0.0;
  Matrix d_summaries;  // B x D
  SyntheticMoments moments;
};

// The synthetic log likelihood together with its gradient with respect to
// every synthetic summary, propagated through the sample mean, the sample
// covariance and the trace-proportional jitter.
SynthLoglikGradient synth_loglik_with_gradient(const Matrix& summaries, const Vector& s_obs);

// One stratum of the exact discrete imputation model.
struct DiscreteStratum {
  long total = 0;
  Vector probs;
};

struct DiscreteState {
  std::vector<DiscreteStratum> strata;
  int n_summaries = 0;
  // Maps one replicate's per-stratum counts to a summary vector.
  std::function<void(const std::vector<Vector>& counts, Eigen::Ref<Vector> out)> summarize;
};

struct DiscreteLoglik {
  double value = 0.0;
  SyntheticMoments moments;
  bool small_b_disc = false;
};

// Exact multinomial draws with fresh randomness. Used only after sampling,
// never inside the gradient path.
DiscreteLoglik discrete_synth_loglik(const DiscreteState& state, const Vector& s_obs, int B_disc,
                                     const RngStream& rng);

// Multinomial(total, probs) via sequential conditional binomials.
void sample_multinomial(long total, const Vector& probs, std::mt19937_64& rng, Vector& counts);

}  // namespace synlik
