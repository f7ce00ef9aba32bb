#pragma once

#include <optional>
#include <string>
#include <vector>

#include "synlik/hmc.hpp"
#include "synlik/netdata.hpp"
#include "synlik/psis.hpp"
#include "synlik/toy.hpp"

namespace synlik {

// Posterior of one analysis method. For PSIS-reweighted methods the chains
// are those of the underlying BSL fit and `psis` holds the weights.
struct MethodFit {
  std::string method;
  std::vector<std::string> names;
  std::vector<ChainDraws> chains;
  std::vector<PosteriorSummary> summary;
  std::vector<RhatResult> rhat;
  std::vector<double> ess;
  std::optional<PsisResult> psis;
  Vector raw_log_weights;  // before smoothing; empty unless reweighted
  double seconds = 0.0;

  long grad_evals() const;
  int n_divergent() const;
  double max_rhat() const;
};

// Weighted mean, SD and quantiles; weights need not be normalized.
PosteriorSummary weighted_summary(std::span<const double> values, std::span<const double> weights);

// Runs HMC and summarizes every parameter.
MethodFit fit_model(const LogDensityModel& model, const HmcConfig& hmc, std::string method,
                    std::vector<std::string> names);

// The same draws summarized under PSIS weights built from per-draw
// likelihood pairs (in pooled chain order).
MethodFit reweight(const MethodFit& raw, std::span<const LikelihoodPair> pairs, std::string method);

struct ToyRunConfig {
  int n = 120;
  int m = 10;
  double c = 2.0;
  double sigma = 1.0;
  double mu_true = 1.0;
  int B = kDefaultToyB;
  int B_disc = 1000;
  std::vector<ToyVariant> variants = {ToyVariant::Oracle, ToyVariant::Simple, ToyVariant::BslIndividual,
                                      ToyVariant::BslContinuous};
  bool psis = true;  // adds the reweighted continuous row
  HmcConfig hmc;
  std::uint64_t seed = 1;
};

struct ToyRow {
  MethodFit fit;
  double cri_ratio = 0.0;  // NaN when no oracle row exists
};

struct ToyRun {
  ToyData data;
  std::vector<ToyRow> rows;
  NormalPosterior analytic_oracle;
};

ToyRun run_toy(const ToyRunConfig& config);

std::string toy_method_label(ToyVariant v);
inline constexpr const char* kToyPsisLabel = "BSL (Continuous + PSIS)";

struct NmrRunConfig {
  int B = kDefaultNmrB;
  int B_disc = 5001;
  HmcConfig hmc;
  std::uint64_t crn_seed = 1;
};

// Oracle (complete data), ML-NMR (masked studies reduced to counts),
// BSL (masked studies with subgroup summaries) and BSL-IS (the BSL draws
// reweighted by PSIS).
struct NmrRun {
  std::vector<std::string> names;
  std::optional<MethodFit> oracle;
  MethodFit ml_nmr;
  MethodFit bsl;
  std::optional<MethodFit> bsl_is;
  std::vector<int> empty_subgroups;  // per BSL study, flattened entry indices
};

// The oracle network is absent for real data, where the masked studies'
// IPD is unavailable.
NmrRun run_nmr(const std::optional<NetworkFile>& oracle_net, const NetworkFile& ml_nmr_net,
               const NetworkFile& bsl_net, const NmrRunConfig& config);

// Convenience for simulated networks: builds the three networks from the
// masking plan of the simulation config.
NmrRun run_masking_experiment(const SimConfig& sim, const NmrRunConfig& config);

}  // namespace synlik
