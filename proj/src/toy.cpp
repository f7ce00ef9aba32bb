#include "synlik/toy.hpp"

#include <cmath>

namespace synlik {

int ToyData::observed_exceedances() const {
  return static_cast<int>((y_obs.array() > c).count());
}

void ToyData::validate() const {
  if (m > n || m < 0 || y_obs.size() != m) {
    throw Error(ErrorKind::InvalidArgument, "toy data: need 0 <= m <= n and m observed values");
  }
  if (!(sigma > 0.0) || !(prior_sd > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "toy data: sigma and prior_sd must be positive");
  }
  if (s_obs < 0.0 || s_obs > 1.0 || std::abs(s_obs * n - std::round(s_obs * n)) > 1e-9) {
    throw Error(ErrorKind::InvalidArgument, "toy data: s_obs must be a proportion of n");
  }
  if (y_full && y_full->size() != n) {
    throw Error(ErrorKind::InvalidArgument, "toy data: y_full must hold n values");
  }
}

ToyData simulate_toy(int n, int m, double mu, double sigma, double c, std::uint64_t seed) {
  if (m >= n || m < 0) throw Error(ErrorKind::InvalidArgument, "simulate_toy: need 0 <= m < n");
  auto rng = RngStream{seed, 0x701}.engine();
  std::normal_distribution<double> normal(mu, sigma);
  Vector y(n);
  for (int i = 0; i < n; ++i) y[i] = normal(rng);
  ToyData d;
  d.n = n;
  d.m = m;
  d.c = c;
  d.sigma = sigma;
  d.y_obs = y.head(m);
  d.y_full = y;
  d.s_obs = static_cast<double>((y.array() > c).count()) / n;
  return d;
}

std::string_view to_string(ToyVariant v) {
  switch (v) {
    case ToyVariant::Oracle: return "oracle";
    case ToyVariant::Simple: return "simple";
    case ToyVariant::BslIndividual: return "bsl-individual";
    case ToyVariant::BslContinuous: return "bsl-continuous";
  }
  return "unknown";
}

ToyVariant parse_toy_variant(std::string_view name) {
  for (ToyVariant v : {ToyVariant::Oracle, ToyVariant::Simple, ToyVariant::BslIndividual,
                       ToyVariant::BslContinuous}) {
    if (to_string(v) == name) return v;
  }
  throw Error(ErrorKind::InvalidArgument, "unknown toy variant '" + std::string(name) + "'");
}

double toy_exceedance_prob(double mu, double sigma, double c) {
  return std_normal_cdf((mu - c) / sigma);
}

namespace {

void add_normal_obs(const Vector& values, double mu, double sigma, LogDensity& out) {
  const double n = static_cast<double>(values.size());
  const double ss = (values.array() - mu).square().sum();
  out.value += -0.5 * n * (kLog2Pi + 2.0 * std::log(sigma)) - 0.5 * ss / (sigma * sigma);
  out.gradient[0] += (values.array() - mu).sum() / (sigma * sigma);
}

void add_prior(const ToyData& d, double mu, LogDensity& out) {
  const double z = (mu - d.prior_mean) / d.prior_sd;
  out.value += -0.5 * (kLog2Pi + 2.0 * std::log(d.prior_sd)) - 0.5 * z * z;
  out.gradient[0] += -z / d.prior_sd;
}

struct ContinuousTerm {
  double value = 0.0;
  double d_mu = 0.0;
  std::uint64_t signature = 0;
};

ContinuousTerm continuous_term(const ToyData& d, const CrnStore& crn, double mu) {
  if (crn.W.cols() < 1) throw Error(ErrorKind::InvalidArgument, "toy CRN lacks relaxation draws");
  const int B = crn.B;
  const double missing = static_cast<double>(d.n - d.m);
  const double p = toy_exceedance_prob(mu, d.sigma, d.c);
  const double dp = std_normal_pdf((mu - d.c) / d.sigma) / d.sigma;
  const double obs = d.observed_exceedances();

  Matrix s(B, 1);
  std::vector<double> d_count(B);
  ContinuousTerm t;
  for (int b = 0; b < B; ++b) {
    const RelaxedBinomial rb = relax_binomial_partials(missing, p, crn.W(b, 0));
    s(b, 0) = (obs + rb.value) / d.n;
    d_count[b] = rb.d_p;
    if (rb.clamped) t.signature = splitmix64(t.signature ^ (2 * b + (rb.value > 0.0 ? 2 : 1)));
  }
  const SynthLoglikGradient g = synth_loglik_with_gradient(s, Vector::Constant(1, d.s_obs));
  t.value = g.value;
  for (int b = 0; b < B; ++b) t.d_mu += g.d_summaries(b, 0) * d_count[b] / d.n * dp;
  t.signature = splitmix64(t.signature ^ static_cast<std::uint64_t>(g.moments.jitter_level));
  return t;
}

}  // namespace

LogDensity toy_logposterior(ToyVariant variant, const ToyData& d, const CrnStore& crn, double mu) {
  LogDensity out;
  out.gradient = Vector::Zero(1);
  add_prior(d, mu, out);
  switch (variant) {
    case ToyVariant::Oracle:
      if (!d.y_full) throw Error(ErrorKind::InvalidArgument, "oracle variant needs all n values");
      add_normal_obs(*d.y_full, mu, d.sigma, out);
      break;
    case ToyVariant::Simple:
      add_normal_obs(d.y_obs, mu, d.sigma, out);
      break;
    case ToyVariant::BslIndividual: {
      add_normal_obs(d.y_obs, mu, d.sigma, out);
      const int missing = d.n - d.m;
      if (crn.Z.cols() < missing) {
        throw Error(ErrorKind::InvalidArgument, "toy CRN lacks imputation draws");
      }
      const double obs = d.observed_exceedances();
      Matrix s(crn.B, 1);
      std::uint64_t sig = 0;
      for (int b = 0; b < crn.B; ++b) {
        const auto count = ((mu + d.sigma * crn.Z.row(b).head(missing).array()) > d.c).count();
        s(b, 0) = (obs + static_cast<double>(count)) / d.n;
        sig = splitmix64(sig ^ static_cast<std::uint64_t>(count));
      }
      const SyntheticMoments mom = synth_moments(s);
      out.value += continuous_synth_loglik(Vector::Constant(1, d.s_obs), mom);
      out.branch_signature = splitmix64(sig ^ static_cast<std::uint64_t>(mom.jitter_level));
      break;
    }
    case ToyVariant::BslContinuous: {
      add_normal_obs(d.y_obs, mu, d.sigma, out);
      const ContinuousTerm t = continuous_term(d, crn, mu);
      out.value += t.value;
      out.gradient[0] += t.d_mu;
      out.branch_signature = t.signature;
      break;
    }
  }
  if (!std::isfinite(out.value) || !std::isfinite(out.gradient[0])) {
    throw Error(ErrorKind::NonFiniteDensity, "toy log posterior not finite");
  }
  return out;
}

ToyModel::ToyModel(ToyVariant variant, ToyData data, CrnStore crn)
    : variant_(variant), data_(std::move(data)), crn_(std::move(crn)) {
  data_.validate();
}

LogDensity ToyModel::evaluate(const Vector& theta) const {
  return toy_logposterior(variant_, data_, crn_, theta[0]);
}

CrnStore toy_crn(const ToyData& data, int B, std::uint64_t seed) {
  return CrnStore::draw(B, data.n - data.m, 1, seed);
}

double toy_continuous_synth_loglik(const ToyData& data, const CrnStore& crn, double mu) {
  return continuous_term(data, crn, mu).value;
}

DiscreteState toy_discrete_state(const ToyData& data, double mu) {
  const double p = toy_exceedance_prob(mu, data.sigma, data.c);
  DiscreteState state;
  Vector probs(2);
  probs << p, 1.0 - p;
  state.strata.push_back({static_cast<long>(data.n - data.m), probs});
  state.n_summaries = 1;
  const double obs = data.observed_exceedances();
  const double n = data.n;
  state.summarize = [obs, n](const std::vector<Vector>& counts, Eigen::Ref<Vector> out) {
    out[0] = (obs + counts[0][0]) / n;
  };
  return state;
}

LikelihoodPair toy_likelihood_pair(const ToyData& data, const CrnStore& crn, double mu, int B_disc,
                                   const RngStream& rng) {
  LikelihoodPair pair;
  pair.l_cont = toy_continuous_synth_loglik(data, crn, mu);
  pair.l_disc = discrete_synth_loglik(toy_discrete_state(data, mu), Vector::Constant(1, data.s_obs),
                                      B_disc, rng)
                    .value;
  return pair;
}

NormalPosterior toy_conjugate_posterior(const ToyData& data, const Vector& values) {
  const double prior_prec = 1.0 / (data.prior_sd * data.prior_sd);
  const double like_prec = static_cast<double>(values.size()) / (data.sigma * data.sigma);
  const double prec = prior_prec + like_prec;
  const double mean =
      (data.prior_mean * prior_prec + values.sum() / (data.sigma * data.sigma)) / prec;
  return {mean, std::sqrt(1.0 / prec)};
}

}  // namespace synlik
