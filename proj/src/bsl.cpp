#include "synlik/bsl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace synlik {

CrnStore CrnStore::draw(int B, int n_missing, int n_relaxation, std::uint64_t seed) {
  if (B < 2) throw Error(ErrorKind::InvalidArgument, "CrnStore requires B >= 2");
  if (n_missing < 0 || n_relaxation < 0) {
    throw Error(ErrorKind::InvalidArgument, "CrnStore: negative column count");
  }
  CrnStore crn;
  crn.B = B;
  crn.seed = seed;
  std::normal_distribution<double> normal;
  auto z_rng = RngStream{seed, 0x5a}.engine();
  crn.Z.resize(B, n_missing);
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < n_missing; ++i) crn.Z(b, i) = normal(z_rng);
  auto w_rng = RngStream{seed, 0x57}.engine();
  normal.reset();
  crn.W.resize(B, n_relaxation);
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < n_relaxation; ++i) crn.W(b, i) = normal(w_rng);
  return crn;
}

RelaxedBinomial relax_binomial_partials(double total, double p, double w) {
  RelaxedBinomial r;
  const double sd = std::sqrt(std::max(0.0, total * p * (1.0 - p)));
  const double raw = total * p + sd * w;
  if (raw < 0.0) {
    r.clamped = true;
    return r;
  }
  if (raw > total) {
    r.value = total;
    r.d_total = 1.0;
    r.clamped = true;
    return r;
  }
  r.value = raw;
  r.d_total = p;
  r.d_p = total;
  if (sd > 0.0) {
    r.d_total += 0.5 * p * (1.0 - p) * w / sd;
    r.d_p += 0.5 * total * (1.0 - 2.0 * p) * w / sd;
  }
  return r;
}

double relax_binomial(double total, double p, double w) {
  return relax_binomial_partials(total, p, w).value;
}

void SequentialRelaxation::forward(double total, std::span<const double> probs,
                                   std::span<const double> w, std::span<double> counts) {
  const std::size_t K = probs.size();
  if (K == 0 || counts.size() != K || w.size() + 1 < K) {
    throw Error(ErrorKind::DimensionMismatch, "sequential relaxation: size mismatch");
  }
  probs_.assign(probs.begin(), probs.end());
  mass_.resize(K);
  q_.assign(K, 0.0);
  d_remaining_.assign(K, 0.0);
  d_q_.assign(K, 0.0);
  q_saturated_.assign(K, 0);
  mass_[K - 1] = probs[K - 1];
  for (std::size_t k = K - 1; k-- > 0;) mass_[k] = probs[k] + mass_[k + 1];

  n_clamped_ = 0;
  clamp_hash_ = 0;
  double remaining = total;
  for (std::size_t k = 0; k + 1 < K; ++k) {
    if (remaining <= 0.0) {
      counts[k] = 0.0;
      continue;
    }
    if (mass_[k] < 1e-300) {
      throw Error(ErrorKind::DegenerateMass,
                  "remaining probability mass underflowed with positive remaining count");
    }
    double q = probs[k] / mass_[k];
    if (q > 1.0) {
      q = 1.0;
      q_saturated_[k] = 1;
    }
    q_[k] = q;
    const RelaxedBinomial rb = relax_binomial_partials(remaining, q, w[k]);
    counts[k] = rb.value;
    d_remaining_[k] = rb.d_total;
    d_q_[k] = q_saturated_[k] ? 0.0 : rb.d_p;
    if (rb.clamped) {
      ++n_clamped_;
      clamp_hash_ = splitmix64(clamp_hash_ ^ (2 * k + (rb.value > 0.0 ? 2 : 1)));
    }
    remaining -= rb.value;
  }
  counts[K - 1] = remaining;
}

void SequentialRelaxation::backward(std::span<const double> count_adjoint,
                                    std::span<double> prob_adjoint) const {
  const std::size_t K = probs_.size();
  std::vector<double> mass_adjoint(K, 0.0);
  double remaining_adj = count_adjoint[K - 1];
  for (std::size_t k = K - 1; k-- > 0;) {
    const double x_adj = count_adjoint[k] - remaining_adj;
    remaining_adj += x_adj * d_remaining_[k];
    const double q_adj = x_adj * d_q_[k];
    if (q_adj != 0.0) {
      prob_adjoint[k] += q_adj / mass_[k];
      mass_adjoint[k] -= q_adj * probs_[k] / (mass_[k] * mass_[k]);
    }
  }
  // mass_k = sum_{i >= k} probs_i
  double running = 0.0;
  for (std::size_t i = 0; i < K; ++i) {
    running += mass_adjoint[i];
    prob_adjoint[i] += running;
  }
}

Vector relax_multinomial_sequential(double total, std::span<const double> probs,
                                    std::span<const double> w) {
  if (total < 0.0) throw Error(ErrorKind::InvalidArgument, "negative total");
  if (probs.empty()) throw Error(ErrorKind::InvalidArgument, "empty probability vector");
  if (w.size() + 1 != probs.size()) {
    throw Error(ErrorKind::DimensionMismatch, "w must have K - 1 entries");
  }
  const double sum = std::accumulate(probs.begin(), probs.end(), 0.0);
  if (std::abs(sum - 1.0) > 1e-10 ||
      std::any_of(probs.begin(), probs.end(), [](double p) { return p < 0.0; })) {
    throw Error(ErrorKind::InvalidArgument, "probabilities must be >= 0 and sum to 1");
  }
  Vector counts(static_cast<Eigen::Index>(probs.size()));
  SequentialRelaxation relax;
  relax.forward(total, probs, w, std::span<double>(counts.data(), probs.size()));
  return counts;
}

namespace {

double jitter_base(const Matrix& cov) {
  const double trace = cov.trace();
  return trace > 0.0 ? 1e-8 * trace / static_cast<double>(cov.rows()) : 1e-8;
}

}  // namespace

SyntheticMoments synth_moments(const Matrix& summaries) {
  const Eigen::Index B = summaries.rows();
  const Eigen::Index D = summaries.cols();
  if (B < 2) throw Error(ErrorKind::InvalidArgument, "synth_moments requires B >= 2");
  if (D < 1) throw Error(ErrorKind::InvalidArgument, "synth_moments requires D >= 1");
  if (!summaries.allFinite()) {
    throw Error(ErrorKind::NonFiniteDensity, "synthetic summaries contain non-finite values");
  }
  SyntheticMoments m;
  m.small_b = B < D + 2;
  m.mean = summaries.colwise().mean().transpose();
  const Matrix centred = summaries.rowwise() - m.mean.transpose();
  const Matrix raw = (centred.transpose() * centred) / static_cast<double>(B - 1);
  m.zero_variance_summary = (raw.diagonal().array() <= 0.0).any();
  const double base = jitter_base(raw);
  for (int level = 0; level <= kMaxJitterEscalations; ++level) {
    const double jitter = base * std::pow(10.0, level);
    m.cov = raw;
    m.cov.diagonal().array() += jitter;
    m.chol.compute(m.cov);
    if (m.chol.info() == Eigen::Success) {
      m.jitter_applied = jitter;
      m.jitter_level = level;
      return m;
    }
  }
  throw Error(ErrorKind::SingularAfterEscalation,
              "synthetic covariance not positive definite after jitter escalation");
}

double continuous_synth_loglik(const Vector& s_obs, const SyntheticMoments& moments) {
  if (s_obs.size() != moments.mean.size()) {
    throw Error(ErrorKind::DimensionMismatch, "observed summaries and moments disagree");
  }
  if (moments.chol.info() != Eigen::Success) {
    return mvn_logpdf(s_obs, moments.mean, moments.cov);
  }
  const Vector z = moments.chol.matrixL().solve(s_obs - moments.mean);
  const double log_det = 2.0 * moments.chol.matrixLLT().diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(s_obs.size()) * kLog2Pi + log_det + z.squaredNorm());
}

SynthLoglikGradient synth_loglik_with_gradient(const Matrix& summaries, const Vector& s_obs) {
  SynthLoglikGradient out;
  out.moments = synth_moments(summaries);
  out.value = continuous_synth_loglik(s_obs, out.moments);

  const Eigen::Index B = summaries.rows();
  const Eigen::Index D = summaries.cols();
  const Matrix cov_inv = out.moments.chol.solve(Matrix::Identity(D, D));
  const Vector alpha = cov_inv * (s_obs - out.moments.mean);
  // d value / d cov, symmetric.
  Matrix g = 0.5 * (alpha * alpha.transpose() - cov_inv);
  const Matrix centred = summaries.rowwise() - out.moments.mean.transpose();
  const double raw_trace = out.moments.cov.trace() - static_cast<double>(D) * out.moments.jitter_applied;
  if (raw_trace > 0.0) {
    const double coef = 1e-8 * std::pow(10.0, out.moments.jitter_level) / static_cast<double>(D);
    g.diagonal().array() += coef * g.trace();
  }
  out.d_summaries = (2.0 / static_cast<double>(B - 1)) * centred * g;
  out.d_summaries.rowwise() += (alpha / static_cast<double>(B)).transpose();
  return out;
}

void sample_multinomial(long total, const Vector& probs, std::mt19937_64& rng, Vector& counts) {
  const Eigen::Index K = probs.size();
  counts.setZero(K);
  long remaining = total;
  double mass = 1.0;
  for (Eigen::Index k = 0; k + 1 < K && remaining > 0; ++k) {
    const double q = mass > 0.0 ? std::clamp(probs[k] / mass, 0.0, 1.0) : 1.0;
    long x = 0;
    if (q >= 1.0) {
      x = remaining;
    } else if (q > 0.0) {
      std::binomial_distribution<long> bin(remaining, q);
      x = bin(rng);
    }
    counts[k] = static_cast<double>(x);
    remaining -= x;
    mass -= probs[k];
  }
  if (K > 0) counts[K - 1] += static_cast<double>(remaining);
}

DiscreteLoglik discrete_synth_loglik(const DiscreteState& state, const Vector& s_obs, int B_disc,
                                     const RngStream& rng) {
  if (B_disc < 2) throw Error(ErrorKind::InvalidArgument, "B_disc must be >= 2");
  if (s_obs.size() != state.n_summaries) {
    throw Error(ErrorKind::DimensionMismatch, "observed summaries and state disagree");
  }
  auto engine = rng.engine();
  Matrix summaries(B_disc, state.n_summaries);
  std::vector<Vector> counts(state.strata.size());
  for (int b = 0; b < B_disc; ++b) {
    for (std::size_t s = 0; s < state.strata.size(); ++s) {
      sample_multinomial(state.strata[s].total, state.strata[s].probs, engine, counts[s]);
    }
    Vector row(state.n_summaries);
    state.summarize(counts, row);
    summaries.row(b) = row.transpose();
  }
  DiscreteLoglik out;
  out.moments = synth_moments(summaries);
  out.small_b_disc = out.moments.small_b;
  out.value = continuous_synth_loglik(s_obs, out.moments);
  return out;
}

}  // namespace synlik
