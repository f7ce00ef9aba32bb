#include "synlik/nmr.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace synlik {

std::string_view to_string(StudyKind kind) {
  switch (kind) {
    case StudyKind::FullIPD: return "FullIPD";
    case StudyKind::PartialIPD: return "PartialIPD";
    case StudyKind::PartialIPDSubgroups: return "PartialIPD+Subgroups";
  }
  return "unknown";
}

StudyKind parse_study_kind(std::string_view name) {
  for (StudyKind k : {StudyKind::FullIPD, StudyKind::PartialIPD, StudyKind::PartialIPDSubgroups}) {
    if (to_string(k) == name) return k;
  }
  throw Error(ErrorKind::SchemaError, "unknown study kind '" + std::string(name) + "'");
}

double continuity_log_or(const Table2x2& t) {
  return std::log(t.a + 0.5) + std::log(t.d + 0.5) - std::log(t.b + 0.5) - std::log(t.c + 0.5);
}

double subgroup_logor_diff(const Table2x2& high, const Table2x2& low) {
  for (const Table2x2* t : {&high, &low}) {
    if (t->a < 0 || t->b < 0 || t->c < 0 || t->d < 0) {
      throw Error(ErrorKind::InvalidArgument, "subgroup table cells must be >= 0");
    }
  }
  return continuity_log_or(high) - continuity_log_or(low);
}

Vector SubgroupSummarySet::values() const {
  Vector v(dim());
  for (int d = 0; d < dim(); ++d) v[d] = entries[d].value;
  return v;
}

bool StudyRecord::has_arm(int t) const { return std::find(arms.begin(), arms.end(), t) != arms.end(); }

int StudyRecord::comparator_arm(int reference) const {
  if (has_arm(reference)) return reference;
  return arms.empty() ? -1 : arms.front();
}

int Network::treatment_index(std::string_view name) const {
  for (int i = 0; i < n_treatments(); ++i) {
    if (treatments[i].name == name) return i;
  }
  throw Error(ErrorKind::UnknownId, "unknown treatment '" + std::string(name) + "'");
}

int Network::covariate_index(std::string_view name) const {
  for (int i = 0; i < n_covariates(); ++i) {
    if (covariates[i].name == name) return i;
  }
  throw Error(ErrorKind::UnknownId, "unknown covariate '" + std::string(name) + "'");
}

int Network::study_index(std::string_view id) const {
  for (int i = 0; i < static_cast<int>(studies.size()); ++i) {
    if (studies[i].id == id) return i;
  }
  throw Error(ErrorKind::UnknownId, "unknown study '" + std::string(id) + "'");
}

ParameterLayout::ParameterLayout(const Network& net)
    : n_studies_(static_cast<int>(net.studies.size())), n_cov_(net.n_covariates()) {
  const int T = net.n_treatments();
  gamma_slot_.assign(T, -1);
  class_slot_.assign(T, -1);
  for (int t = 0; t < T; ++t) {
    if (t == net.reference) continue;
    gamma_slot_[t] = n_gamma_++;
    std::string cls = net.treatments[t].treatment_class;
    if (!net.class_shared || cls.empty()) cls = net.treatments[t].name;
    auto it = std::find(class_names_.begin(), class_names_.end(), cls);
    if (it == class_names_.end()) {
      class_names_.push_back(cls);
      it = class_names_.end() - 1;
    }
    class_slot_[t] = static_cast<int>(it - class_names_.begin());
  }
  n_classes_ = static_cast<int>(class_names_.size());
}

std::vector<std::string> ParameterLayout::names(const Network& net) const {
  std::vector<std::string> out(dim());
  for (int j = 0; j < n_studies_; ++j) out[mu(j)] = "mu[" + net.studies[j].id + "]";
  for (int t = 0; t < net.n_treatments(); ++t) {
    if (gamma_slot_[t] >= 0) out[gamma(gamma_slot_[t])] = "gamma[" + net.treatments[t].name + "]";
  }
  for (int p = 0; p < n_cov_; ++p) {
    out[beta1(p)] = "beta1[" + net.covariates[p].name + "]";
    for (int c = 0; c < n_classes_; ++c) {
      out[beta2(c, p)] = "beta2[" + class_names_[c] + "," + net.covariates[p].name + "]";
    }
  }
  return out;
}

ParameterVector ParameterVector::unpack(const ParameterLayout& layout, const Vector& theta) {
  if (theta.size() != layout.dim()) throw Error(ErrorKind::DimensionMismatch, "theta length");
  ParameterVector pv;
  pv.mu = theta.segment(layout.mu(0), layout.n_studies());
  pv.gamma = theta.segment(layout.gamma(0), layout.n_gamma());
  pv.beta1 = theta.segment(layout.beta1(0), layout.n_covariates());
  pv.beta2.resize(layout.n_classes(), layout.n_covariates());
  for (int c = 0; c < layout.n_classes(); ++c)
    for (int p = 0; p < layout.n_covariates(); ++p) pv.beta2(c, p) = theta[layout.beta2(c, p)];
  return pv;
}

Vector ParameterVector::pack(const ParameterLayout& layout) const {
  Vector theta(layout.dim());
  theta.segment(layout.mu(0), layout.n_studies()) = mu;
  theta.segment(layout.gamma(0), layout.n_gamma()) = gamma;
  theta.segment(layout.beta1(0), layout.n_covariates()) = beta1;
  for (int c = 0; c < layout.n_classes(); ++c)
    for (int p = 0; p < layout.n_covariates(); ++p) theta[layout.beta2(c, p)] = beta2(c, p);
  return theta;
}

namespace {

void check_ids(const ParameterLayout& layout, int study, int trt, int n_treatments) {
  if (study < 0 || study >= layout.n_studies()) throw Error(ErrorKind::UnknownId, "study index");
  if (trt < 0 || trt >= n_treatments) throw Error(ErrorKind::UnknownId, "treatment index");
}

// beta1 + beta2_{class(t)}
Vector coefficients(const ParameterLayout& layout, const Vector& theta, int trt) {
  Vector coef = theta.segment(layout.beta1(0), layout.n_covariates());
  const int c = layout.class_slot(trt);
  if (c >= 0) coef += theta.segment(layout.beta2(c, 0), layout.n_covariates());
  return coef;
}

double offset(const ParameterLayout& layout, const Vector& theta, int study, int trt) {
  const int g = layout.gamma_slot(trt);
  return theta[layout.mu(study)] + (g >= 0 ? theta[layout.gamma(g)] : 0.0);
}

// Adds d/d theta of sum_i w_i * eta_i for eta_i = offset + x_i' coef(trt),
// given the summed weight and the weighted covariate sum.
void add_eta_gradient(const ParameterLayout& layout, int study, int trt, double weight_sum,
                      const Vector& weighted_x, Vector& grad) {
  grad[layout.mu(study)] += weight_sum;
  const int g = layout.gamma_slot(trt);
  if (g >= 0) grad[layout.gamma(g)] += weight_sum;
  grad.segment(layout.beta1(0), layout.n_covariates()) += weighted_x;
  const int c = layout.class_slot(trt);
  if (c >= 0) grad.segment(layout.beta2(c, 0), layout.n_covariates()) += weighted_x;
}

Vector grid_eta(const StudyRecord& s, const ParameterLayout& layout, const Vector& theta, int study,
                int trt) {
  Vector eta = s.grid * coefficients(layout, theta, trt);
  eta.array() += offset(layout, theta, study, trt);
  return eta;
}

void require_grid(const StudyRecord& s) {
  if (s.grid.rows() == 0) throw Error(ErrorKind::EmptyGrid, "study " + s.id + " has no integration points");
}

}  // namespace

double linear_predictor(const ParameterLayout& layout, const Vector& theta, int study, int trt,
                        const Eigen::Ref<const Vector>& x) {
  if (study < 0 || study >= layout.n_studies()) throw Error(ErrorKind::UnknownId, "study index");
  if (trt < 0 || trt >= layout.n_treatments()) throw Error(ErrorKind::UnknownId, "treatment index");
  if (x.size() != layout.n_covariates()) {
    throw Error(ErrorKind::DimensionMismatch, "covariate vector length differs from P");
  }
  return offset(layout, theta, study, trt) + x.dot(coefficients(layout, theta, trt));
}

double full_ipd_loglik(const Network& net, const ParameterLayout& layout, const Vector& theta,
                       int study, Vector* grad) {
  const StudyRecord& s = net.studies.at(study);
  if (s.kind != StudyKind::FullIPD) {
    throw Error(ErrorKind::MissingCovariates, "study " + s.id + " is not a full-IPD study");
  }
  const int P = layout.n_covariates();
  const int T = net.n_treatments();
  std::vector<Vector> coef(T);
  std::vector<double> off(T);
  for (int t : s.arms) {
    coef[t] = coefficients(layout, theta, t);
    off[t] = offset(layout, theta, study, t);
  }
  std::vector<double> w_sum(T, 0.0);
  std::vector<Vector> wx(T, Vector::Zero(P));
  double value = 0.0;
  for (const IpdRow& row : s.ipd) {
    if (row.x.size() != P) {
      throw Error(ErrorKind::MissingCovariates, "study " + s.id + " has rows without covariates");
    }
    check_ids(layout, study, row.trt, T);
    if (coef[row.trt].size() == 0) {
      coef[row.trt] = coefficients(layout, theta, row.trt);
      off[row.trt] = offset(layout, theta, study, row.trt);
    }
    const double eta = off[row.trt] + row.x.dot(coef[row.trt]);
    value += bernoulli_logit_lpmf(row.y, eta);
    if (grad) {
      const double d = row.y - inv_logit(eta);
      w_sum[row.trt] += d;
      wx[row.trt] += d * row.x;
    }
  }
  if (grad) {
    for (int t = 0; t < T; ++t) {
      if (coef[t].size() > 0) add_eta_gradient(layout, study, t, w_sum[t], wx[t], *grad);
    }
  }
  return value;
}

double marginal_loglik(const Network& net, const ParameterLayout& layout, const Vector& theta,
                       int study, Vector* grad) {
  const StudyRecord& s = net.studies.at(study);
  require_grid(s);
  const Eigen::Index K = s.grid.rows();
  const double log_k = std::log(static_cast<double>(K));
  double value = 0.0;
  std::vector<double> lp(K);
  for (int t : s.arms) {
    const long n1 = s.counts[t][1];
    const long n0 = s.counts[t][0];
    if (n1 == 0 && n0 == 0) continue;
    const Vector eta = grid_eta(s, layout, theta, study, t);
    Vector d_eta = Vector::Zero(K);
    for (int y = 0; y <= 1; ++y) {
      const long n = s.counts[t][y];
      if (n == 0) continue;
      for (Eigen::Index k = 0; k < K; ++k) lp[k] = bernoulli_logit_lpmf(y, eta[k]);
      const double lse = log_sum_exp(lp);
      value += static_cast<double>(n) * (lse - log_k);
      if (grad) {
        for (Eigen::Index k = 0; k < K; ++k) {
          d_eta[k] += static_cast<double>(n) * std::exp(lp[k] - lse) * (y - inv_logit(eta[k]));
        }
      }
    }
    if (grad) add_eta_gradient(layout, study, t, d_eta.sum(), s.grid.transpose() * d_eta, *grad);
  }
  return value;
}

namespace {

Vector softmax_probs(int y, const Vector& eta) {
  const Eigen::Index K = eta.size();
  std::vector<double> lp(K);
  for (Eigen::Index k = 0; k < K; ++k) lp[k] = bernoulli_logit_lpmf(y, eta[k]);
  const double lse = log_sum_exp(lp);
  if (!std::isfinite(lse)) {
    throw Error(ErrorKind::AllZeroLikelihood, "every integration point has zero likelihood");
  }
  Vector r(K);
  for (Eigen::Index k = 0; k < K; ++k) r[k] = std::exp(lp[k] - lse);
  return r;
}

}  // namespace

Vector pattern_probs(const Network& net, const ParameterLayout& layout, const Vector& theta,
                     int study, int y, int trt) {
  check_ids(layout, study, trt, net.n_treatments());
  const StudyRecord& s = net.studies.at(study);
  require_grid(s);
  return softmax_probs(y, grid_eta(s, layout, theta, study, trt));
}

BslStudy::BslStudy(const Network& net, int study, int B, std::uint64_t seed) : study_(study) {
  const StudyRecord& s = net.studies.at(study);
  if (s.kind != StudyKind::PartialIPDSubgroups || !s.subgroups) {
    throw Error(ErrorKind::SchemaError, "study " + s.id + " has no subgroup summaries");
  }
  require_grid(s);
  K_ = static_cast<int>(s.grid.rows());
  std::vector<std::array<int, 2>> index(net.n_treatments(), {-1, -1});
  for (int t : s.arms) {
    for (int y : {1, 0}) {
      index[t][y] = static_cast<int>(strata_.size());
      strata_.push_back({y, t, s.counts[t][y]});
    }
  }
  const SubgroupSummarySet& set = *s.subgroups;
  for (int d = 0; d < set.dim(); ++d) {
    const SubgroupEntry& e = set.entries[d];
    if (!s.has_arm(e.treatment) || !s.has_arm(e.comparator)) {
      throw Error(ErrorKind::SchemaError, "subgroup comparison uses an arm absent from study " + s.id);
    }
    if (e.covariate < 0 || e.covariate >= net.n_covariates()) {
      throw Error(ErrorKind::UnknownId, "subgroup covariate index");
    }
    Split split;
    split.high.resize(K_);
    int n_high = 0;
    for (int k = 0; k < K_; ++k) {
      split.high[k] = s.grid_raw(k, e.covariate) > e.threshold ? 1 : 0;
      n_high += split.high[k];
    }
    if (n_high == 0 || n_high == K_) empty_subgroups_.push_back(d);
    split.trt_event = index[e.treatment][1];
    split.trt_none = index[e.treatment][0];
    split.cmp_event = index[e.comparator][1];
    split.cmp_none = index[e.comparator][0];
    splits_.push_back(std::move(split));
  }
  s_obs_ = set.values();
  crn_ = CrnStore::draw(B, 0, static_cast<int>(strata_.size()) * (K_ - 1),
                        splitmix64(seed ^ (0x9e37ULL * static_cast<std::uint64_t>(study + 1))));
  w_by_replicate_ = crn_.W.transpose();
}

void BslStudy::summarize(const std::vector<Vector>& counts, Eigen::Ref<Vector> out) const {
  for (std::size_t d = 0; d < splits_.size(); ++d) {
    const Split& sp = splits_[d];
    Table2x2 high, low;
    for (int k = 0; k < K_; ++k) {
      Table2x2& t = sp.high[k] ? high : low;
      t.a += counts[sp.trt_event][k];
      t.b += counts[sp.trt_none][k];
      t.c += counts[sp.cmp_event][k];
      t.d += counts[sp.cmp_none][k];
    }
    out[static_cast<Eigen::Index>(d)] = continuity_log_or(high) - continuity_log_or(low);
  }
}

BslStudy::Result BslStudy::evaluate(const Network& net, const ParameterLayout& layout,
                                    const Vector& theta, Vector* grad) const {
  const StudyRecord& s = net.studies[study_];
  const int n_strata = static_cast<int>(strata_.size());
  const int B = crn_.B;
  const int D = dim();

  std::vector<Vector> eta(net.n_treatments());
  std::vector<Vector> probs(n_strata);
  for (int i = 0; i < n_strata; ++i) {
    const int t = strata_[i].trt;
    if (eta[t].size() == 0) eta[t] = grid_eta(s, layout, theta, study_, t);
    probs[i] = softmax_probs(strata_[i].y, eta[t]);
  }

  std::vector<SequentialRelaxation> relax(n_strata);
  std::vector<Vector> counts(n_strata, Vector(K_));
  auto run_forward = [&](int b) {
    for (int i = 0; i < n_strata; ++i) {
      const double* w = w_by_replicate_.col(b).data() + static_cast<Eigen::Index>(i) * (K_ - 1);
      relax[i].forward(static_cast<double>(strata_[i].total),
                       std::span<const double>(probs[i].data(), K_), std::span<const double>(w, K_ - 1),
                       std::span<double>(counts[i].data(), K_));
    }
  };

  Result result;
  Matrix summaries(B, D);
  for (int b = 0; b < B; ++b) {
    run_forward(b);
    Vector row(D);
    summarize(counts, row);
    summaries.row(b) = row.transpose();
    for (int i = 0; i < n_strata; ++i) {
      if (relax[i].n_clamped() > 0) {
        result.branch_signature = splitmix64(result.branch_signature ^ relax[i].clamp_hash() ^
                                             (static_cast<std::uint64_t>(b * n_strata + i) << 32));
      }
    }
  }
  const SynthLoglikGradient g = synth_loglik_with_gradient(summaries, s_obs_);
  result.l_cont = g.value;
  result.jitter_level = g.moments.jitter_level;
  result.branch_signature = splitmix64(result.branch_signature ^ static_cast<std::uint64_t>(g.moments.jitter_level));
  if (!grad) return result;

  std::vector<Vector> prob_adj(n_strata, Vector::Zero(K_));
  std::vector<Vector> count_adj(n_strata, Vector(K_));
  for (int b = 0; b < B; ++b) {
    run_forward(b);
    for (auto& c : count_adj) c.setZero();
    for (int d = 0; d < D; ++d) {
      const double gd = g.d_summaries(b, d);
      if (gd == 0.0) continue;
      const Split& sp = splits_[d];
      Table2x2 high, low;
      for (int k = 0; k < K_; ++k) {
        Table2x2& t = sp.high[k] ? high : low;
        t.a += counts[sp.trt_event][k];
        t.b += counts[sp.trt_none][k];
        t.c += counts[sp.cmp_event][k];
        t.d += counts[sp.cmp_none][k];
      }
      for (int k = 0; k < K_; ++k) {
        const Table2x2& t = sp.high[k] ? high : low;
        const double sign = sp.high[k] ? gd : -gd;
        count_adj[sp.trt_event][k] += sign / (t.a + 0.5);
        count_adj[sp.trt_none][k] -= sign / (t.b + 0.5);
        count_adj[sp.cmp_event][k] -= sign / (t.c + 0.5);
        count_adj[sp.cmp_none][k] += sign / (t.d + 0.5);
      }
    }
    for (int i = 0; i < n_strata; ++i) {
      relax[i].backward(std::span<const double>(count_adj[i].data(), K_),
                        std::span<double>(prob_adj[i].data(), K_));
    }
  }

  // Softmax of Bernoulli log likelihoods back to the linear predictors.
  std::vector<Vector> eta_adj(net.n_treatments());
  for (int i = 0; i < n_strata; ++i) {
    const int t = strata_[i].trt;
    const int y = strata_[i].y;
    if (eta_adj[t].size() == 0) eta_adj[t] = Vector::Zero(K_);
    const Vector& r = probs[i];
    const double centre = prob_adj[i].dot(r);
    for (int k = 0; k < K_; ++k) {
      eta_adj[t][k] += (y - inv_logit(eta[t][k])) * r[k] * (prob_adj[i][k] - centre);
    }
  }
  for (int t = 0; t < net.n_treatments(); ++t) {
    if (eta_adj[t].size() == 0) continue;
    add_eta_gradient(layout, study_, t, eta_adj[t].sum(), s.grid.transpose() * eta_adj[t], *grad);
  }
  return result;
}

DiscreteState BslStudy::discrete_state(const Network& net, const ParameterLayout& layout,
                                       const Vector& theta) const {
  const StudyRecord& s = net.studies[study_];
  DiscreteState state;
  for (const Stratum& st : strata_) {
    state.strata.push_back({st.total, softmax_probs(st.y, grid_eta(s, layout, theta, study_, st.trt))});
  }
  state.n_summaries = dim();
  state.summarize = [this](const std::vector<Vector>& counts, Eigen::Ref<Vector> out) {
    summarize(counts, out);
  };
  return state;
}

NetworkModel::NetworkModel(Network net, int B, std::uint64_t crn_seed, Priors priors)
    : net_(std::move(net)), layout_(net_), priors_(priors) {
  for (int j = 0; j < static_cast<int>(net_.studies.size()); ++j) {
    const StudyRecord& s = net_.studies[j];
    if (s.kind == StudyKind::FullIPD) {
      if (s.ipd.empty()) throw Error(ErrorKind::MissingCovariates, "study " + s.id + " has no IPD rows");
    } else {
      require_grid(s);
      if (s.kind == StudyKind::PartialIPDSubgroups) bsl_.emplace_back(net_, j, B, crn_seed);
    }
  }
}

double NetworkModel::log_prior(const Vector& theta, Vector* grad) const {
  double value = 0.0;
  auto add = [&](int i, double sd) {
    const double z = theta[i] / sd;
    value += -0.5 * (kLog2Pi + 2.0 * std::log(sd)) - 0.5 * z * z;
    if (grad) (*grad)[i] -= z / sd;
  };
  for (int j = 0; j < layout_.n_studies(); ++j) add(layout_.mu(j), priors_.mu_sd);
  for (int g = 0; g < layout_.n_gamma(); ++g) add(layout_.gamma(g), priors_.gamma_sd);
  for (int p = 0; p < layout_.n_covariates(); ++p) {
    add(layout_.beta1(p), priors_.beta1_sd);
    for (int c = 0; c < layout_.n_classes(); ++c) add(layout_.beta2(c, p), priors_.beta2_sd);
  }
  return value;
}

LogDensity NetworkModel::evaluate(const Vector& theta) const {
  LogDensity out;
  out.gradient = Vector::Zero(dim());
  out.value = log_prior(theta, &out.gradient);
  for (int j = 0; j < static_cast<int>(net_.studies.size()); ++j) {
    if (net_.studies[j].kind == StudyKind::FullIPD) {
      out.value += full_ipd_loglik(net_, layout_, theta, j, &out.gradient);
    } else {
      out.value += marginal_loglik(net_, layout_, theta, j, &out.gradient);
    }
  }
  for (const BslStudy& bsl : bsl_) {
    const BslStudy::Result r = bsl.evaluate(net_, layout_, theta, &out.gradient);
    out.value += r.l_cont;
    out.branch_signature = splitmix64(out.branch_signature ^ r.branch_signature);
  }
  if (!std::isfinite(out.value)) throw Error(ErrorKind::NonFiniteDensity, "network log posterior");
  return out;
}

LikelihoodPair NetworkModel::likelihood_pair(const Vector& theta, int B_disc, const RngStream& rng) const {
  LikelihoodPair pair;
  for (const BslStudy& bsl : bsl_) {
    pair.l_cont += bsl.evaluate(net_, layout_, theta).l_cont;
    const DiscreteState state = bsl.discrete_state(net_, layout_, theta);
    pair.l_disc += discrete_synth_loglik(state, bsl.s_obs(), B_disc,
                                        rng.child(static_cast<std::uint64_t>(bsl.study())))
                       .value;
  }
  return pair;
}

}  // namespace synlik
