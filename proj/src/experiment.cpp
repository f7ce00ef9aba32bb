#include "synlik/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

namespace synlik {

long MethodFit::grad_evals() const {
  long n = 0;
  for (const ChainDraws& c : chains) n += c.grad_evals;
  return n;
}

int MethodFit::n_divergent() const {
  int n = 0;
  for (const ChainDraws& c : chains) n += c.n_divergent();
  return n;
}

double MethodFit::max_rhat() const {
  double r = 0.0;
  for (const RhatResult& x : rhat) r = std::max(r, x.value);
  return r;
}

PosteriorSummary weighted_summary(std::span<const double> values, std::span<const double> weights) {
  if (values.size() != weights.size() || values.empty()) {
    throw Error(ErrorKind::DimensionMismatch, "weighted_summary: size mismatch");
  }
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  double mean = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) mean += weights[i] * values[i];
  mean /= total;
  double var = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) var += weights[i] * (values[i] - mean) * (values[i] - mean);
  PosteriorSummary s;
  s.mean = mean;
  s.sd = std::sqrt(var / total);
  s.q025 = weighted_quantile(values, weights, 0.025);
  s.q500 = weighted_quantile(values, weights, 0.5);
  s.q975 = weighted_quantile(values, weights, 0.975);
  return s;
}

MethodFit fit_model(const LogDensityModel& model, const HmcConfig& hmc, std::string method,
                    std::vector<std::string> names) {
  MethodFit fit;
  fit.method = std::move(method);
  fit.names = std::move(names);
  const auto start = std::chrono::steady_clock::now();
  fit.chains = run_chains(model, hmc);
  fit.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const Matrix pooled = pooled_draws(fit.chains);
  for (int p = 0; p < model.dim(); ++p) {
    const Vector col = pooled.col(p);
    fit.summary.push_back(summarize(std::span<const double>(col.data(), col.size())));
    fit.rhat.push_back(rhat(fit.chains, p));
    fit.ess.push_back(ess(fit.chains, p));
  }
  return fit;
}

MethodFit reweight(const MethodFit& raw, std::span<const LikelihoodPair> pairs, std::string method) {
  MethodFit fit = raw;
  fit.method = std::move(method);
  fit.raw_log_weights = raw_log_weights(pairs);
  fit.psis = psis_smooth(fit.raw_log_weights);
  const Matrix pooled = pooled_draws(raw.chains);
  if (pooled.rows() != static_cast<Eigen::Index>(pairs.size())) {
    throw Error(ErrorKind::DimensionMismatch, "one likelihood pair per pooled draw is required");
  }
  const Vector w = fit.psis->normalized_weights();
  for (Eigen::Index p = 0; p < pooled.cols(); ++p) {
    const Vector col = pooled.col(p);
    fit.summary[p] = weighted_summary(std::span<const double>(col.data(), col.size()),
                                      std::span<const double>(w.data(), w.size()));
  }
  return fit;
}

std::string toy_method_label(ToyVariant v) {
  switch (v) {
    case ToyVariant::Oracle: return "Oracle (complete data)";
    case ToyVariant::Simple: return "Simple (observed only)";
    case ToyVariant::BslIndividual: return "BSL (Individual)";
    case ToyVariant::BslContinuous: return "BSL (Continuous)";
  }
  return "unknown";
}

ToyRun run_toy(const ToyRunConfig& config) {
  ToyRun run;
  run.data = simulate_toy(config.n, config.m, config.mu_true, config.sigma, config.c, config.seed);
  run.analytic_oracle = toy_conjugate_posterior(run.data, *run.data.y_full);
  const CrnStore crn = toy_crn(run.data, config.B, splitmix64(config.seed ^ 0xc4a));
  HmcConfig hmc = config.hmc;

  const MethodFit* oracle = nullptr;
  for (ToyVariant v : config.variants) {
    hmc.seed = splitmix64(config.seed + static_cast<std::uint64_t>(v) + 1);
    const ToyModel model(v, run.data, crn);
    run.rows.push_back({fit_model(model, hmc, toy_method_label(v), {"mu"}), 0.0});
    if (v == ToyVariant::BslContinuous && config.psis) {
      const MethodFit& raw = run.rows.back().fit;
      const Matrix pooled = pooled_draws(raw.chains);
      const RngStream rng{config.seed, 0xd15c};
      std::vector<LikelihoodPair> pairs(pooled.rows());
      for (Eigen::Index i = 0; i < pooled.rows(); ++i) {
        pairs[i] = toy_likelihood_pair(run.data, crn, pooled(i, 0), config.B_disc,
                                       rng.child(static_cast<std::uint64_t>(i)));
      }
      run.rows.push_back({reweight(raw, pairs, kToyPsisLabel), 0.0});
    }
  }
  for (const ToyRow& row : run.rows) {
    if (row.fit.method == toy_method_label(ToyVariant::Oracle)) oracle = &row.fit;
  }
  for (ToyRow& row : run.rows) {
    if (!oracle) {
      row.cri_ratio = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    const PosteriorSummary& o = oracle->summary[0];
    const PosteriorSummary& s = row.fit.summary[0];
    row.cri_ratio = (s.q975 - s.q025) / (o.q975 - o.q025);
  }
  return run;
}

NmrRun run_nmr(const std::optional<NetworkFile>& oracle_net, const NetworkFile& ml_nmr_net,
               const NetworkFile& bsl_net, const NmrRunConfig& config) {
  NmrRun run;
  HmcConfig hmc = config.hmc;
  const NetworkModel bsl_model(bsl_net.network, config.B, config.crn_seed);
  run.names = bsl_model.layout().names(bsl_model.network());

  if (oracle_net) {
    const NetworkModel m(oracle_net->network, config.B, config.crn_seed);
    hmc.seed = splitmix64(config.hmc.seed ^ 0x0a);
    run.oracle = fit_model(m, hmc, "Oracle", run.names);
  }
  {
    const NetworkModel m(ml_nmr_net.network, config.B, config.crn_seed);
    hmc.seed = splitmix64(config.hmc.seed ^ 0x0b);
    run.ml_nmr = fit_model(m, hmc, "ML-NMR", run.names);
  }
  hmc.seed = splitmix64(config.hmc.seed ^ 0x0c);
  run.bsl = fit_model(bsl_model, hmc, "BSL", run.names);
  for (const BslStudy& s : bsl_model.bsl_studies()) {
    for (int d : s.empty_subgroups()) run.empty_subgroups.push_back(d);
  }
  if (!bsl_model.bsl_studies().empty()) {
    const Matrix pooled = pooled_draws(run.bsl.chains);
    const RngStream rng{config.crn_seed, 0xd15c};
    std::vector<LikelihoodPair> pairs(pooled.rows());
    for (Eigen::Index i = 0; i < pooled.rows(); ++i) {
      pairs[i] = bsl_model.likelihood_pair(pooled.row(i).transpose(), config.B_disc,
                                           rng.child(static_cast<std::uint64_t>(i)));
    }
    run.bsl_is = reweight(run.bsl, pairs, "BSL-IS");
  }
  return run;
}

NmrRun run_masking_experiment(const SimConfig& sim, const NmrRunConfig& config) {
  const NetworkFile full = simulate_network(sim);
  SimConfig drop = sim;
  for (auto& [id, mode] : drop.masking) mode = MaskMode::DropCovariates;
  SimConfig keep = sim;
  for (auto& [id, mode] : keep.masking) mode = MaskMode::DropCovariatesKeepSubgroups;
  return run_nmr(full, apply_masking(full, drop), apply_masking(full, keep), config);
}

}  // namespace synlik
