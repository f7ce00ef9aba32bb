#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "synlik/error.hpp"

namespace synlik {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kLog2Pi = 1.8378770664093454836;

// Phi(x) through erfc; saturates to exactly 0 / 1 in the far tails.
inline double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

inline double std_normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

// Inverse of std_normal_cdf for p in (0, 1).
double std_normal_quantile(double p);

inline double inv_logit(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow.
inline double log1p_exp(double x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

// log P(Y = y) for Y ~ Bernoulli(inv_logit(eta)).
inline double bernoulli_logit_lpmf(int y, double eta) {
  return y == 1 ? -log1p_exp(-eta) : -log1p_exp(eta);
}

double log_sum_exp(std::span<const double> xs);

// Log density of N(mean, cov) at x. The covariance is factorized with LLT;
// a failed factorization raises NonPositiveDefinite.
template <typename DX, typename DM, typename DC>
double mvn_logpdf(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DM>& mean,
                  const Eigen::MatrixBase<DC>& cov) {
  const Eigen::Index d = x.size();
  if (mean.size() != d || cov.rows() != d || cov.cols() != d) {
    throw Error(ErrorKind::DimensionMismatch, "mvn_logpdf: dimensions disagree");
  }
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorKind::NonPositiveDefinite, "mvn_logpdf: Cholesky failed");
  }
  const Vector r = (x - mean).template cast<double>();
  const Vector z = llt.matrixL().solve(r);
  const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(d) * kLog2Pi + log_det + z.squaredNorm());
}

inline constexpr int kMaxSobolDim = 16;

// First n points of the unscrambled Sobol sequence (Joe-Kuo direction
// numbers), one point per row. The first row is the origin.
Matrix sobol_points(int dim, int n);

// Immutable descriptor of a reproducible random stream. Each consumer
// materializes its own engine, so the same (seed, stream_id) always yields
// the same sequence no matter which thread draws from it.
struct RngStream {
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;

  std::mt19937_64 engine() const;
  RngStream child(std::uint64_t tag) const;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace synlik
