#include "synlik/psis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace synlik {

Vector PsisResult::normalized_weights() const {
  Vector w = log_weights_smoothed.array().exp();
  return w / w.sum();
}

Vector raw_log_weights(std::span<const LikelihoodPair> pairs) {
  Vector lw(static_cast<Eigen::Index>(pairs.size()));
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const double v = pairs[i].l_disc - pairs[i].l_cont;
    if (!std::isfinite(v)) {
      throw Error(ErrorKind::NonFiniteWeight, "draw " + std::to_string(i) + " has a non-finite weight");
    }
    lw[static_cast<Eigen::Index>(i)] = v;
  }
  return lw;
}

std::optional<GpdFit> fit_gpd(std::span<const double> exceedances) {
  const std::size_t n = exceedances.size();
  if (n < 5) throw Error(ErrorKind::InsufficientTail, "fit_gpd needs at least 5 exceedances");
  std::vector<double> x(exceedances.begin(), exceedances.end());
  if (std::any_of(x.begin(), x.end(), [](double v) { return !(v >= 0.0) || !std::isfinite(v); })) {
    throw Error(ErrorKind::InvalidArgument, "fit_gpd: exceedances must be finite and >= 0");
  }
  std::sort(x.begin(), x.end());
  if (x.back() - x.front() <= std::numeric_limits<double>::epsilon() * std::abs(x.back())) {
    return std::nullopt;
  }

  const double N = static_cast<double>(n);
  constexpr double prior = 3.0;
  constexpr int min_grid_pts = 30;
  const int M = min_grid_pts + static_cast<int>(std::floor(std::sqrt(N)));
  const double x_star = x[static_cast<std::size_t>(std::floor(N / 4.0 + 0.5)) - 1];

  std::vector<double> theta(M), profile(M);
  for (int j = 0; j < M; ++j) {
    theta[j] = 1.0 / x.back() +
               (1.0 - std::sqrt(static_cast<double>(M) / (j + 1 - 0.5))) / prior / x_star;
    double k = 0.0;
    for (double v : x) k += std::log1p(-theta[j] * v);
    k /= N;
    profile[j] = N * (std::log(-theta[j] / k) - k - 1.0);
  }
  const double lse = log_sum_exp(profile);
  double theta_hat = 0.0;
  for (int j = 0; j < M; ++j) theta_hat += theta[j] * std::exp(profile[j] - lse);

  double k = 0.0;
  for (double v : x) k += std::log1p(-theta_hat * v);
  k /= N;
  const double sigma = -k / theta_hat;
  constexpr double a = 10.0;
  k = k * N / (N + a) + a * 0.5 / (N + a);
  if (std::isnan(k)) k = std::numeric_limits<double>::infinity();
  return GpdFit{k, sigma};
}

double gpd_quantile(double p, double k, double sigma) {
  if (k == 0.0) return -sigma * std::log1p(-p);
  return sigma * std::expm1(-k * std::log1p(-p)) / k;
}

PsisResult psis_smooth(const Vector& log_weights) {
  const Eigen::Index S = log_weights.size();
  if (S < kMinPsisDraws) {
    throw Error(ErrorKind::InsufficientDraws,
                "psis_smooth needs at least " + std::to_string(kMinPsisDraws) + " draws");
  }
  if (!log_weights.allFinite()) throw Error(ErrorKind::NonFiniteWeight, "non-finite log weight");

  PsisResult out;
  Vector lw = log_weights.array() - log_weights.maxCoeff();
  const double s = static_cast<double>(S);
  const int tail = static_cast<int>(std::ceil(std::min(0.2 * s, 3.0 * std::sqrt(s))));
  out.tail_size = tail;

  std::vector<Eigen::Index> order(S);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return lw[a] < lw[b]; });
  const Eigen::Index first_tail = S - tail;
  const double cutoff = lw[order[first_tail - 1]];
  const double exp_cutoff = std::exp(cutoff);

  std::vector<double> exceed(tail);
  for (int i = 0; i < tail; ++i) exceed[i] = std::exp(lw[order[first_tail + i]]) - exp_cutoff;
  const double tail_max = lw[order[S - 1]];
  const double tail_min = lw[order[first_tail]];

  if (std::abs(tail_max - tail_min) >= std::numeric_limits<double>::epsilon() / 100.0) {
    for (double& e : exceed) e = std::max(e, 0.0);
    const std::optional<GpdFit> fit = fit_gpd(exceed);
    if (fit) {
      out.k_hat = fit->k;
      if (std::isfinite(fit->k)) {
        for (int i = 0; i < tail; ++i) {
          const double p = (i + 0.5) / static_cast<double>(tail);
          lw[order[first_tail + i]] = std::log(gpd_quantile(p, fit->k, fit->sigma) + exp_cutoff);
        }
      }
    }
  }
  // Truncate at the largest raw weight.
  lw = lw.cwiseMin(0.0);
  out.log_weights_smoothed = lw;
  const Vector w = out.normalized_weights();
  out.n_eff = 1.0 / w.squaredNorm();
  return out;
}

WeightedEstimate reweighted_estimate(const Matrix& draws, const PsisResult& result,
                                     const std::function<double(const Vector&)>& f) {
  if (draws.rows() != result.log_weights_smoothed.size()) {
    throw Error(ErrorKind::DimensionMismatch, "draw count differs from weight count");
  }
  const Vector w = result.normalized_weights();
  Vector values(draws.rows());
  for (Eigen::Index i = 0; i < draws.rows(); ++i) values[i] = f(draws.row(i).transpose());
  WeightedEstimate est;
  est.estimate = w.dot(values);
  est.mc_se = std::sqrt((w.array().square() * (values.array() - est.estimate).square()).sum());
  return est;
}

double weighted_quantile(std::span<const double> values, std::span<const double> weights, double p) {
  if (values.size() != weights.size() || values.empty()) {
    throw Error(ErrorKind::DimensionMismatch, "weighted_quantile: size mismatch");
  }
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  double cum = 0.0;
  double prev_mid = 0.0;
  double prev_value = values[order.front()];
  bool first = true;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const double w = weights[order[i]] / total;
    if (w <= 0.0) continue;
    const double mid = cum + 0.5 * w;
    const double v = values[order[i]];
    if (p <= mid) {
      if (first || mid <= prev_mid) return v;
      return prev_value + (v - prev_value) * (p - prev_mid) / (mid - prev_mid);
    }
    cum += w;
    prev_mid = mid;
    prev_value = v;
    first = false;
  }
  return prev_value;
}

}  // namespace synlik
