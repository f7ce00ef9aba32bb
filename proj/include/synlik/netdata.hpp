#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "synlik/nmr.hpp"

namespace synlik {

// A network together with the parameter values it was simulated from, when
// known.
struct NetworkFile {
  Network network;
  std::optional<Vector> truth;  // in ParameterLayout order
};

// Reads the network JSON document and the IPD CSV it references (path
// relative to the JSON file). Missing covariate centers are filled with the
// pooled full-IPD means; integration grids are built for every study that
// needs one.
NetworkFile load_network(const std::filesystem::path& json_path);

// Writes <json_path> and an IPD CSV next to it named <stem>_ipd.csv.
void save_network(const NetworkFile& file, const std::filesystem::path& json_path);

// Sets every covariate center to its pooled mean over all IPD rows and
// recomputes model-scale covariates and grids.
void center_covariates(Network& net);

// Model-scale covariates of every IPD row from x_raw.
void apply_covariate_scale(Network& net);

// K integration points on the original scale: Sobol points shifted to cell
// midpoints, mapped through normal quantiles (continuous) or thresholded at
// the prevalence (binary), optionally coupled by a Gaussian copula.
Matrix build_integration_grid(const std::vector<Covariate>& covariates,
                              const std::vector<CovariateMarginal>& marginals,
                              const std::optional<Matrix>& correlation, int K);

// Fills grid_raw / grid of every study that is not FullIPD.
void build_grids(Network& net);

// counts[t][y] tallied from the study's IPD rows.
std::vector<std::array<long, 2>> tally_counts(const StudyRecord& study, int n_treatments);

// Empirical marginal of each covariate over the study's IPD (sample SD).
std::vector<CovariateMarginal> empirical_marginals(const StudyRecord& study,
                                                   const std::vector<Covariate>& covariates);

// One entry per (non-comparator arm, covariate with a threshold), computed
// from the study's IPD.
SubgroupSummarySet subgroup_summaries_from_ipd(const Network& net, const StudyRecord& study);

enum class MaskMode { DropCovariates, DropCovariatesKeepSubgroups };

std::string_view to_string(MaskMode mode);

NetworkFile mask_study(const NetworkFile& file, std::string_view study_id, MaskMode mode);

struct SimStudy {
  std::string id;
  std::vector<int> arms;  // treatment indices
  int n = 400;
  std::vector<CovariateMarginal> marginals;  // per covariate
  std::optional<Matrix> correlation;
};

struct SimConfig {
  std::vector<Treatment> treatments;
  int reference = 0;
  std::vector<Covariate> covariates;  // centers are recomputed
  std::vector<SimStudy> studies;
  bool class_shared = true;
  int integration_points = 16;
  Vector truth;  // ParameterLayout order
  std::vector<std::pair<std::string, MaskMode>> masking;
  std::uint64_t seed = 1;

  void validate() const;
};

// Three studies (A/B, A/C, A/B), three treatments in two classes, three
// covariates (two continuous, one binary) with one nonzero effect modifier.
SimConfig desk_sim_config(std::uint64_t seed);

// Complete-IPD network drawn from the logistic model at config.truth; the
// masking plan is recorded but not applied. Deterministic given the seed.
NetworkFile simulate_network(const SimConfig& config);

// Applies config.masking to a simulated network.
NetworkFile apply_masking(const NetworkFile& file, const SimConfig& config);

bool structurally_equal(const Network& a, const Network& b, double tol = 0.0);

}  // namespace synlik
