#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "synlik/bsl.hpp"
#include "synlik/grad.hpp"

namespace synlik {

enum class StudyKind { FullIPD, PartialIPD, PartialIPDSubgroups };
enum class CovariateKind { Binary, Continuous };

std::string_view to_string(StudyKind kind);
StudyKind parse_study_kind(std::string_view name);

struct Treatment {
  std::string name;
  std::string treatment_class;  // empty for the reference
};

struct Covariate {
  std::string name;
  CovariateKind kind = CovariateKind::Continuous;
  double divisor = 1.0;  // model scale: x / divisor - center
  double center = 0.0;
  std::optional<double> threshold;  // subgroup split on the original scale

  double to_model(double raw) const { return raw / divisor - center; }
};

struct IpdRow {
  int y = 0;
  int trt = 0;   // treatment index
  Vector x_raw;  // original scale, length P
  Vector x;      // model scale
};

// (High/Low) x (treatment/comparator) x (event/non-event) counts, summarized
// as the continuity-corrected log odds ratio difference High - Low.
struct Table2x2 {
  double a = 0.0;  // events, treatment
  double b = 0.0;  // non-events, treatment
  double c = 0.0;  // events, comparator
  double d = 0.0;  // non-events, comparator
};

double continuity_log_or(const Table2x2& t);
double subgroup_logor_diff(const Table2x2& high, const Table2x2& low);

struct SubgroupEntry {
  int covariate = 0;
  double threshold = 0.0;  // original scale; High means x_raw > threshold
  int treatment = 0;
  int comparator = 0;
  double value = 0.0;
};

struct SubgroupSummarySet {
  std::vector<SubgroupEntry> entries;

  int dim() const { return static_cast<int>(entries.size()); }
  Vector values() const;
};

struct CovariateMarginal {
  double mean = 0.0;       // continuous, original scale
  double sd = 1.0;         // continuous, original scale
  double prevalence = 0.5; // binary
};

struct StudyRecord {
  std::string id;
  StudyKind kind = StudyKind::FullIPD;
  std::vector<int> arms;  // treatment indices
  std::vector<IpdRow> ipd;
  // counts[t][y] = n_{j,y,t}; sized to the number of treatments
  std::vector<std::array<long, 2>> counts;
  std::vector<CovariateMarginal> marginals;  // per covariate, for grid building
  std::optional<Matrix> correlation;         // Gaussian copula, identity when absent
  Matrix grid_raw;                           // K x P, original scale
  Matrix grid;                               // K x P, model scale
  std::optional<SubgroupSummarySet> subgroups;

  bool has_arm(int t) const;
  int comparator_arm(int reference) const;
};

struct Network {
  std::vector<Treatment> treatments;
  int reference = 0;
  std::vector<Covariate> covariates;
  std::vector<StudyRecord> studies;
  bool class_shared = true;
  int integration_points = 64;

  int n_treatments() const { return static_cast<int>(treatments.size()); }
  int n_covariates() const { return static_cast<int>(covariates.size()); }
  int treatment_index(std::string_view name) const;
  int covariate_index(std::string_view name) const;
  int study_index(std::string_view id) const;
};

// Flat layout of theta = (mu_1..J, gamma for non-reference treatments,
// beta1 (P), beta2 (classes x P, row-major)).
class ParameterLayout {
 public:
  ParameterLayout() = default;
  explicit ParameterLayout(const Network& net);

  int dim() const { return n_studies_ + n_gamma_ + n_cov_ * (1 + n_classes_); }
  int n_studies() const { return n_studies_; }
  int n_gamma() const { return n_gamma_; }
  int n_covariates() const { return n_cov_; }
  int n_classes() const { return n_classes_; }
  int n_treatments() const { return static_cast<int>(gamma_slot_.size()); }

  int mu(int study) const { return study; }
  int gamma(int slot) const { return n_studies_ + slot; }
  int beta1(int p) const { return n_studies_ + n_gamma_ + p; }
  int beta2(int cls, int p) const { return n_studies_ + n_gamma_ + n_cov_ * (1 + cls) + p; }

  // -1 for the reference treatment.
  int gamma_slot(int trt) const { return gamma_slot_[trt]; }
  int class_slot(int trt) const { return class_slot_[trt]; }
  const std::vector<std::string>& class_names() const { return class_names_; }

  std::vector<std::string> names(const Network& net) const;

 private:
  int n_studies_ = 0;
  int n_gamma_ = 0;
  int n_cov_ = 0;
  int n_classes_ = 0;
  std::vector<int> gamma_slot_;
  std::vector<int> class_slot_;
  std::vector<std::string> class_names_;
};

struct ParameterVector {
  Vector mu;
  Vector gamma;  // non-reference treatments in treatment order
  Vector beta1;
  Matrix beta2;  // classes x P

  static ParameterVector unpack(const ParameterLayout& layout, const Vector& theta);
  Vector pack(const ParameterLayout& layout) const;
};

struct Priors {
  double mu_sd = 10.0;
  double gamma_sd = 5.0;
  double beta1_sd = 5.0;
  double beta2_sd = 5.0;
};

// eta = mu_j + gamma_t + x' (beta1 + beta2_{class(t)}); the reference has no
// treatment effect and no interaction.
double linear_predictor(const ParameterLayout& layout, const Vector& theta, int study, int trt,
                        const Eigen::Ref<const Vector>& x);

// Log likelihoods of single studies. When grad is non-null the gradient with
// respect to theta is added into it.
double full_ipd_loglik(const Network& net, const ParameterLayout& layout, const Vector& theta,
                       int study, Vector* grad = nullptr);
double marginal_loglik(const Network& net, const ParameterLayout& layout, const Vector& theta,
                       int study, Vector* grad = nullptr);

// Pr(C = k | y, t, theta) over the study's K integration points.
Vector pattern_probs(const Network& net, const ParameterLayout& layout, const Vector& theta,
                     int study, int y, int trt);

// Synthetic-likelihood machinery for one PartialIPD+Subgroups study. Built
// once per study; evaluation is const and reentrant.
class BslStudy {
 public:
  BslStudy(const Network& net, int study, int B, std::uint64_t seed);

  struct Result {
    double l_cont = 0.0;
    std::uint64_t branch_signature = 0;
    int jitter_level = 0;
  };

  // l_cont with its gradient added into grad when non-null.
  Result evaluate(const Network& net, const ParameterLayout& layout, const Vector& theta,
                  Vector* grad = nullptr) const;

  // Exact multinomial imputation state at theta, for the discrete pass.
  DiscreteState discrete_state(const Network& net, const ParameterLayout& layout,
                               const Vector& theta) const;

  int study() const { return study_; }
  int dim() const { return static_cast<int>(s_obs_.size()); }
  const Vector& s_obs() const { return s_obs_; }
  const CrnStore& crn() const { return crn_; }
  // Entries whose split leaves the High or the Low group without any
  // integration point.
  const std::vector<int>& empty_subgroups() const { return empty_subgroups_; }

 private:
  struct Stratum {
    int y;
    int trt;
    long total;
  };
  struct Split {
    std::vector<char> high;  // per integration point
    // stratum indices of (events, non-events) for treatment and comparator
    int trt_event, trt_none, cmp_event, cmp_none;
  };

  void summarize(const std::vector<Vector>& counts, Eigen::Ref<Vector> out) const;

  int study_;
  int K_;
  std::vector<Stratum> strata_;
  std::vector<Split> splits_;
  Vector s_obs_;
  CrnStore crn_;
  Matrix w_by_replicate_;  // crn_.W transposed: column b holds replicate b
  std::vector<int> empty_subgroups_;
};

// Full posterior over a network: full-IPD likelihood, marginal likelihood
// for studies without covariates, the continuous synthetic likelihood for
// studies with subgroup summaries, and independent normal priors.
class NetworkModel final : public LogDensityModel {
 public:
  NetworkModel(Network net, int B, std::uint64_t crn_seed, Priors priors = {});

  int dim() const override { return layout_.dim(); }
  LogDensity evaluate(const Vector& theta) const override;

  double log_prior(const Vector& theta, Vector* grad = nullptr) const;

  // Summed over all BSL studies: l_cont from the CRN relaxation, l_disc from
  // B_disc fresh exact multinomial replicates.
  LikelihoodPair likelihood_pair(const Vector& theta, int B_disc, const RngStream& rng) const;

  const Network& network() const { return net_; }
  const ParameterLayout& layout() const { return layout_; }
  const std::vector<BslStudy>& bsl_studies() const { return bsl_; }
  const Priors& priors() const { return priors_; }

 private:
  Network net_;
  ParameterLayout layout_;
  Priors priors_;
  std::vector<BslStudy> bsl_;
};

}  // namespace synlik
