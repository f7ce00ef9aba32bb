#include "synlik/netdata.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>
#include "json.hpp"

namespace synlik {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

[[noreturn]] void schema(const std::string& where, const std::string& what) {
  throw Error(ErrorKind::SchemaError, where + ": " + what);
}

const json& field(const json& j, const char* key, const std::string& where) {
  if (!j.is_object()) schema(where, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) schema(where, std::string("missing field '") + key + "'");
  return *it;
}

template <typename T>
T get_as(const json& j, const std::string& where) {
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    schema(where, e.what());
  }
}

template <typename T>
T get_field(const json& j, const char* key, const std::string& where) {
  return get_as<T>(field(j, key, where), where + "." + key);
}

template <typename T>
T get_optional(const json& j, const char* key, T fallback, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  return get_as<T>(*it, where + "." + key);
}

Matrix matrix_from_json(const json& j, int n, const std::string& where) {
  if (!j.is_array() || static_cast<int>(j.size()) != n) schema(where, fmt::format("expected {} rows", n));
  Matrix m(n, n);
  for (int r = 0; r < n; ++r) {
    const auto row = get_as<std::vector<double>>(j[r], fmt::format("{}[{}]", where, r));
    if (static_cast<int>(row.size()) != n) schema(where, fmt::format("row {} must have {} entries", r, n));
    for (int c = 0; c < n; ++c) m(r, c) = row[c];
  }
  return m;
}

json matrix_to_json(const Matrix& m) {
  json out = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    out.push_back(row);
  }
  return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  for (auto& c : out) {
    while (!c.empty() && (c.back() == '\r' || c.back() == ' ')) c.pop_back();
    while (!c.empty() && c.front() == ' ') c.erase(c.begin());
  }
  return out;
}

double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) schema(where, "'" + s + "' is not a number");
  return v;
}

long parse_long(const std::string& s, const std::string& where) {
  long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) schema(where, "'" + s + "' is not an integer");
  return v;
}

void check_correlation(const Matrix& corr, const std::string& where) {
  if (!corr.isApprox(corr.transpose()) || (corr.diagonal().array() - 1.0).abs().maxCoeff() > 1e-12) {
    schema(where, "correlation must be symmetric with unit diagonal");
  }
  if (Eigen::LLT<Matrix>(corr).info() != Eigen::Success) {
    throw Error(ErrorKind::NonPositiveDefinite, where + ": correlation is not positive definite");
  }
}

}  // namespace

std::string_view to_string(MaskMode mode) {
  return mode == MaskMode::DropCovariates ? "DropCovariates" : "DropCovariatesKeepSubgroups";
}

void apply_covariate_scale(Network& net) {
  const int P = net.n_covariates();
  for (StudyRecord& s : net.studies) {
    for (IpdRow& row : s.ipd) {
      row.x.resize(P);
      for (int p = 0; p < P; ++p) row.x[p] = net.covariates[p].to_model(row.x_raw[p]);
    }
  }
}

Matrix build_integration_grid(const std::vector<Covariate>& covariates,
                              const std::vector<CovariateMarginal>& marginals,
                              const std::optional<Matrix>& correlation, int K) {
  const int P = static_cast<int>(covariates.size());
  if (K < 1) throw Error(ErrorKind::EmptyGrid, "integration grid needs K >= 1");
  if (static_cast<int>(marginals.size()) != P) {
    throw Error(ErrorKind::DimensionMismatch, "one marginal per covariate is required");
  }
  if (P > kMaxSobolDim) {
    throw Error(ErrorKind::UnsupportedDimension, fmt::format("at most {} covariates", kMaxSobolDim));
  }
  Matrix grid(K, P);
  if (P == 0) return grid;
  const Matrix u = sobol_points(P, K);
  const double shift = 0.5 / std::exp2(std::ceil(std::log2(static_cast<double>(K))));
  Matrix z(K, P);
  for (int k = 0; k < K; ++k)
    for (int p = 0; p < P; ++p) z(k, p) = std_normal_quantile(u(k, p) + shift);
  if (correlation) {
    if (correlation->rows() != P || correlation->cols() != P) {
      throw Error(ErrorKind::DimensionMismatch, "correlation must be P x P");
    }
    Eigen::LLT<Matrix> llt(*correlation);
    if (llt.info() != Eigen::Success) throw Error(ErrorKind::NonPositiveDefinite, "copula correlation");
    z = z * llt.matrixU();  // rows become L * z_k
  }
  for (int k = 0; k < K; ++k) {
    for (int p = 0; p < P; ++p) {
      const CovariateMarginal& m = marginals[p];
      if (covariates[p].kind == CovariateKind::Binary) {
        grid(k, p) = std_normal_cdf(z(k, p)) > 1.0 - m.prevalence ? 1.0 : 0.0;
      } else {
        grid(k, p) = m.mean + m.sd * z(k, p);
      }
    }
  }
  return grid;
}

void build_grids(Network& net) {
  const int P = net.n_covariates();
  for (StudyRecord& s : net.studies) {
    if (s.kind == StudyKind::FullIPD) {
      s.grid_raw.resize(0, P);
      s.grid.resize(0, P);
      continue;
    }
    s.grid_raw = build_integration_grid(net.covariates, s.marginals, s.correlation, net.integration_points);
    s.grid.resize(s.grid_raw.rows(), P);
    for (Eigen::Index k = 0; k < s.grid_raw.rows(); ++k)
      for (int p = 0; p < P; ++p) s.grid(k, p) = net.covariates[p].to_model(s.grid_raw(k, p));
  }
}

void center_covariates(Network& net) {
  const int P = net.n_covariates();
  Vector sum = Vector::Zero(P);
  long n = 0;
  for (const StudyRecord& s : net.studies) {
    for (const IpdRow& row : s.ipd) {
      for (int p = 0; p < P; ++p) sum[p] += row.x_raw[p] / net.covariates[p].divisor;
      ++n;
    }
  }
  if (n == 0) throw Error(ErrorKind::MissingCovariates, "centering needs at least one IPD row");
  for (int p = 0; p < P; ++p) net.covariates[p].center = sum[p] / static_cast<double>(n);
  apply_covariate_scale(net);
  build_grids(net);
}

std::vector<std::array<long, 2>> tally_counts(const StudyRecord& study, int n_treatments) {
  std::vector<std::array<long, 2>> counts(n_treatments, {0, 0});
  for (const IpdRow& row : study.ipd) ++counts.at(row.trt)[row.y];
  return counts;
}

std::vector<CovariateMarginal> empirical_marginals(const StudyRecord& study,
                                                   const std::vector<Covariate>& covariates) {
  const int P = static_cast<int>(covariates.size());
  const double n = static_cast<double>(study.ipd.size());
  if (study.ipd.size() < 2) throw Error(ErrorKind::NotIpdStudy, "study " + study.id + " lacks IPD rows");
  std::vector<CovariateMarginal> out(P);
  for (int p = 0; p < P; ++p) {
    double mean = 0.0;
    for (const IpdRow& row : study.ipd) mean += row.x_raw[p];
    mean /= n;
    double ss = 0.0;
    for (const IpdRow& row : study.ipd) ss += (row.x_raw[p] - mean) * (row.x_raw[p] - mean);
    if (covariates[p].kind == CovariateKind::Binary) {
      out[p].prevalence = mean;
    } else {
      out[p].mean = mean;
      out[p].sd = std::sqrt(ss / (n - 1.0));
    }
  }
  return out;
}

SubgroupSummarySet subgroup_summaries_from_ipd(const Network& net, const StudyRecord& study) {
  SubgroupSummarySet set;
  const int cmp = study.comparator_arm(net.reference);
  for (int t : study.arms) {
    if (t == cmp) continue;
    for (int p = 0; p < net.n_covariates(); ++p) {
      if (!net.covariates[p].threshold) continue;
      const double thr = *net.covariates[p].threshold;
      Table2x2 high, low;
      for (const IpdRow& row : study.ipd) {
        if (row.trt != t && row.trt != cmp) continue;
        Table2x2& tab = row.x_raw[p] > thr ? high : low;
        if (row.trt == t) (row.y ? tab.a : tab.b) += 1.0;
        else (row.y ? tab.c : tab.d) += 1.0;
      }
      set.entries.push_back({p, thr, t, cmp, subgroup_logor_diff(high, low)});
    }
  }
  return set;
}

NetworkFile mask_study(const NetworkFile& file, std::string_view study_id, MaskMode mode) {
  NetworkFile out = file;
  Network& net = out.network;
  StudyRecord& s = net.studies[net.study_index(study_id)];
  if (s.kind != StudyKind::FullIPD || s.ipd.empty()) {
    throw Error(ErrorKind::NotIpdStudy, "study " + s.id + " has no IPD to mask");
  }
  s.counts = tally_counts(s, net.n_treatments());
  s.marginals = empirical_marginals(s, net.covariates);
  if (mode == MaskMode::DropCovariatesKeepSubgroups) {
    s.subgroups = subgroup_summaries_from_ipd(net, s);
    s.kind = StudyKind::PartialIPDSubgroups;
  } else {
    s.subgroups.reset();
    s.kind = StudyKind::PartialIPD;
  }
  s.ipd.clear();
  build_grids(net);
  return out;
}

void SimConfig::validate() const {
  const int T = static_cast<int>(treatments.size());
  if (T < 2 || reference < 0 || reference >= T) {
    throw Error(ErrorKind::InvalidArgument, "simulation needs >= 2 treatments and a valid reference");
  }
  for (const SimStudy& s : studies) {
    if (s.arms.size() < 2 || s.n < 2) throw Error(ErrorKind::InvalidArgument, "study " + s.id + " needs 2 arms");
    for (int t : s.arms) {
      if (t < 0 || t >= T) throw Error(ErrorKind::UnknownId, "study " + s.id + " arm index");
    }
    if (s.marginals.size() != covariates.size()) {
      throw Error(ErrorKind::DimensionMismatch, "study " + s.id + " needs one marginal per covariate");
    }
  }
  for (const auto& [id, mode] : masking) {
    if (std::none_of(studies.begin(), studies.end(), [&](const SimStudy& s) { return s.id == id; })) {
      throw Error(ErrorKind::UnknownId, "masking plan names unknown study '" + id + "'");
    }
  }
}

SimConfig desk_sim_config(std::uint64_t seed) {
  SimConfig c;
  c.treatments = {{"A", ""}, {"B", "X"}, {"C", "Y"}};
  c.reference = 0;
  c.covariates = {{"weight", CovariateKind::Continuous, 10.0, 0.0, 90.0},
                  {"duration", CovariateKind::Continuous, 10.0, 0.0, 15.0},
                  {"prior_bio", CovariateKind::Binary, 1.0, 0.0, 0.5}};
  c.studies = {
      {"S1", {0, 1}, 400, {{85.0, 18.0, 0.5}, {14.0, 6.0, 0.5}, {0.5, 1.0, 0.35}}, std::nullopt},
      {"S2", {0, 2}, 400, {{95.0, 20.0, 0.5}, {17.0, 7.0, 0.5}, {0.5, 1.0, 0.5}}, std::nullopt},
      {"S3", {0, 1}, 400, {{92.0, 22.0, 0.5}, {16.0, 6.0, 0.5}, {0.5, 1.0, 0.4}}, std::nullopt}};
  c.integration_points = 16;
  Network shape;
  shape.treatments = c.treatments;
  shape.covariates = c.covariates;
  shape.studies.resize(c.studies.size());
  const ParameterLayout layout(shape);
  c.truth = Vector::Zero(layout.dim());
  c.truth[layout.mu(0)] = -0.4;
  c.truth[layout.mu(1)] = -0.2;
  c.truth[layout.mu(2)] = -0.3;
  c.truth[layout.gamma(0)] = 1.0;
  c.truth[layout.gamma(1)] = 0.7;
  c.truth[layout.beta1(0)] = 0.2;
  c.truth[layout.beta1(1)] = -0.15;
  c.truth[layout.beta1(2)] = 0.3;
  c.truth[layout.beta2(0, 0)] = -0.5;
  c.masking = {{"S3", MaskMode::DropCovariatesKeepSubgroups}};
  c.seed = seed;
  return c;
}

NetworkFile simulate_network(const SimConfig& config) {
  config.validate();
  NetworkFile file;
  Network& net = file.network;
  net.treatments = config.treatments;
  net.reference = config.reference;
  net.covariates = config.covariates;
  net.class_shared = config.class_shared;
  net.integration_points = config.integration_points;
  const int P = net.n_covariates();
  const RngStream root{config.seed, 0x51};

  for (std::size_t j = 0; j < config.studies.size(); ++j) {
    const SimStudy& ss = config.studies[j];
    StudyRecord s;
    s.id = ss.id;
    s.kind = StudyKind::FullIPD;
    s.arms = ss.arms;
    auto rng = root.child(2 * j).engine();
    std::normal_distribution<double> normal;
    Matrix L = Matrix::Identity(P, P);
    if (ss.correlation) {
      Eigen::LLT<Matrix> llt(*ss.correlation);
      if (llt.info() != Eigen::Success) throw Error(ErrorKind::NonPositiveDefinite, "study correlation");
      L = llt.matrixL();
    }
    Vector z(P);
    for (int i = 0; i < ss.n; ++i) {
      IpdRow row;
      row.trt = ss.arms[i % ss.arms.size()];
      for (int p = 0; p < P; ++p) z[p] = normal(rng);
      const Vector zc = L * z;
      row.x_raw.resize(P);
      for (int p = 0; p < P; ++p) {
        const CovariateMarginal& m = ss.marginals[p];
        row.x_raw[p] = net.covariates[p].kind == CovariateKind::Binary
                           ? (std_normal_cdf(zc[p]) > 1.0 - m.prevalence ? 1.0 : 0.0)
                           : m.mean + m.sd * zc[p];
      }
      s.ipd.push_back(std::move(row));
    }
    net.studies.push_back(std::move(s));
  }
  center_covariates(net);

  const ParameterLayout layout(net);
  if (config.truth.size() != layout.dim()) {
    throw Error(ErrorKind::DimensionMismatch,
                fmt::format("truth has {} entries, layout needs {}", config.truth.size(), layout.dim()));
  }
  for (std::size_t j = 0; j < net.studies.size(); ++j) {
    StudyRecord& s = net.studies[j];
    auto rng = root.child(2 * j + 1).engine();
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (IpdRow& row : s.ipd) {
      const double eta = linear_predictor(layout, config.truth, static_cast<int>(j), row.trt, row.x);
      row.y = unif(rng) < inv_logit(eta) ? 1 : 0;
    }
    s.counts = tally_counts(s, net.n_treatments());
  }
  file.truth = config.truth;
  return file;
}

NetworkFile apply_masking(const NetworkFile& file, const SimConfig& config) {
  NetworkFile out = file;
  for (const auto& [id, mode] : config.masking) out = mask_study(out, id, mode);
  return out;
}

NetworkFile load_network(const fs::path& json_path) {
  std::ifstream in(json_path);
  if (!in) throw Error(ErrorKind::SchemaError, json_path.string() + ": cannot open");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    schema(json_path.string(), e.what());
  }

  NetworkFile file;
  Network& net = file.network;
  const json& trts = field(doc, "treatments", "$");
  if (!trts.is_array() || trts.size() < 2) schema("$.treatments", "need at least two treatments");
  for (std::size_t i = 0; i < trts.size(); ++i) {
    const std::string where = fmt::format("$.treatments[{}]", i);
    Treatment t;
    t.name = get_field<std::string>(trts[i], "name", where);
    t.treatment_class = get_optional<std::string>(trts[i], "class", "", where);
    for (const Treatment& prev : net.treatments) {
      if (prev.name == t.name) schema(where, "duplicate treatment '" + t.name + "'");
    }
    net.treatments.push_back(t);
  }
  auto treatment_at = [&](const std::string& name, const std::string& where) {
    for (int i = 0; i < net.n_treatments(); ++i) {
      if (net.treatments[i].name == name) return i;
    }
    schema(where, "undeclared treatment '" + name + "'");
  };
  net.reference = treatment_at(get_field<std::string>(doc, "reference", "$"), "$.reference");
  for (int t = 0; t < net.n_treatments(); ++t) {
    if (t != net.reference && net.treatments[t].treatment_class.empty()) {
      schema(fmt::format("$.treatments[{}]", t), "non-reference treatment needs a class");
    }
  }
  net.class_shared = get_optional<bool>(doc, "class_shared", true, "$");
  net.integration_points = get_optional<int>(doc, "integration_points", 64, "$");
  if (net.integration_points < 1) schema("$.integration_points", "must be >= 1");

  bool centers_given = true;
  const json& covs = field(doc, "covariates", "$");
  if (!covs.is_array()) schema("$.covariates", "expected an array");
  for (std::size_t i = 0; i < covs.size(); ++i) {
    const std::string where = fmt::format("$.covariates[{}]", i);
    Covariate c;
    c.name = get_field<std::string>(covs[i], "name", where);
    const std::string kind = get_field<std::string>(covs[i], "kind", where);
    if (kind == "binary") c.kind = CovariateKind::Binary;
    else if (kind == "continuous") c.kind = CovariateKind::Continuous;
    else schema(where + ".kind", "expected 'binary' or 'continuous'");
    c.divisor = get_optional<double>(covs[i], "divisor", 1.0, where);
    if (!(c.divisor > 0.0)) schema(where + ".divisor", "must be positive");
    if (covs[i].contains("center")) c.center = get_field<double>(covs[i], "center", where);
    else centers_given = false;
    if (covs[i].contains("threshold")) c.threshold = get_field<double>(covs[i], "threshold", where);
    net.covariates.push_back(c);
  }
  const int P = net.n_covariates();
  const int T = net.n_treatments();

  const json& studies = field(doc, "studies", "$");
  if (!studies.is_array()) schema("$.studies", "expected an array");
  std::vector<bool> counts_given;
  for (std::size_t j = 0; j < studies.size(); ++j) {
    const std::string where = fmt::format("$.studies[{}]", j);
    const json& js = studies[j];
    StudyRecord s;
    s.id = get_field<std::string>(js, "id", where);
    for (const StudyRecord& prev : net.studies) {
      if (prev.id == s.id) schema(where, "duplicate study id '" + s.id + "'");
    }
    try {
      s.kind = parse_study_kind(get_field<std::string>(js, "kind", where));
    } catch (const Error& e) {
      schema(where + ".kind", e.what());
    }
    const auto arms = get_field<std::vector<std::string>>(js, "arms", where);
    if (arms.size() < 2) schema(where + ".arms", "need at least two arms");
    for (std::size_t a = 0; a < arms.size(); ++a) {
      s.arms.push_back(treatment_at(arms[a], fmt::format("{}.arms[{}]", where, a)));
    }
    s.counts.assign(T, {0, 0});
    const bool has_counts = js.contains("counts");
    if (has_counts) {
      const json& jc = js["counts"];
      if (!jc.is_object()) schema(where + ".counts", "expected an object keyed by treatment");
      for (auto it = jc.begin(); it != jc.end(); ++it) {
        const std::string cw = where + ".counts." + it.key();
        const int t = treatment_at(it.key(), cw);
        if (!s.has_arm(t)) schema(cw, "treatment is not an arm of the study");
        s.counts[t][1] = get_field<long>(*it, "events", cw);
        s.counts[t][0] = get_field<long>(*it, "non_events", cw);
        if (s.counts[t][0] < 0 || s.counts[t][1] < 0) schema(cw, "counts must be >= 0");
      }
    } else if (s.kind != StudyKind::FullIPD) {
      schema(where, "aggregate study needs 'counts'");
    }
    counts_given.push_back(has_counts);
    if (js.contains("marginals")) {
      const json& jm = js["marginals"];
      if (!jm.is_array() || static_cast<int>(jm.size()) != P) {
        schema(where + ".marginals", fmt::format("expected {} entries", P));
      }
      for (int p = 0; p < P; ++p) {
        const std::string mw = fmt::format("{}.marginals[{}]", where, p);
        CovariateMarginal m;
        if (net.covariates[p].kind == CovariateKind::Binary) {
          m.prevalence = get_field<double>(jm[p], "prevalence", mw);
          if (m.prevalence < 0.0 || m.prevalence > 1.0) schema(mw, "prevalence outside [0, 1]");
        } else {
          m.mean = get_field<double>(jm[p], "mean", mw);
          m.sd = get_field<double>(jm[p], "sd", mw);
          if (!(m.sd > 0.0)) schema(mw, "sd must be positive");
        }
        s.marginals.push_back(m);
      }
    } else if (s.kind != StudyKind::FullIPD) {
      schema(where, "aggregate study needs 'marginals'");
    }
    if (js.contains("correlation")) {
      s.correlation = matrix_from_json(js["correlation"], P, where + ".correlation");
      check_correlation(*s.correlation, where + ".correlation");
    }
    if (js.contains("subgroups")) {
      if (s.kind != StudyKind::PartialIPDSubgroups) {
        schema(where + ".subgroups", "only PartialIPD+Subgroups studies carry subgroup summaries");
      }
      SubgroupSummarySet set;
      const json& jg = js["subgroups"];
      if (!jg.is_array()) schema(where + ".subgroups", "expected an array");
      for (std::size_t d = 0; d < jg.size(); ++d) {
        const std::string gw = fmt::format("{}.subgroups[{}]", where, d);
        SubgroupEntry e;
        const std::string cov = get_field<std::string>(jg[d], "covariate", gw);
        e.covariate = -1;
        for (int p = 0; p < P; ++p) {
          if (net.covariates[p].name == cov) e.covariate = p;
        }
        if (e.covariate < 0) schema(gw + ".covariate", "undeclared covariate '" + cov + "'");
        e.threshold = get_field<double>(jg[d], "threshold", gw);
        e.treatment = treatment_at(get_field<std::string>(jg[d], "treatment", gw), gw + ".treatment");
        e.comparator = treatment_at(get_field<std::string>(jg[d], "comparator", gw), gw + ".comparator");
        if (!s.has_arm(e.treatment) || !s.has_arm(e.comparator)) {
          schema(gw, "comparison uses a treatment that is not an arm of the study");
        }
        e.value = get_field<double>(jg[d], "value", gw);
        if (!std::isfinite(e.value)) schema(gw + ".value", "must be finite");
        set.entries.push_back(e);
      }
      s.subgroups = std::move(set);
    } else if (s.kind == StudyKind::PartialIPDSubgroups) {
      schema(where, "PartialIPD+Subgroups study needs 'subgroups'");
    }
    net.studies.push_back(std::move(s));
  }

  if (doc.contains("ipd_csv")) {
    const fs::path csv_path = json_path.parent_path() / get_field<std::string>(doc, "ipd_csv", "$");
    std::ifstream csv(csv_path);
    const std::string name = csv_path.filename().string();
    if (!csv) schema(name, "cannot open");
    std::string line;
    if (!std::getline(csv, line)) schema(name, "empty file");
    const auto header = split_csv_line(line);
    std::vector<std::string> expected = {"study", "arm", "y", "trt"};
    for (int p = 0; p < P; ++p) expected.push_back(fmt::format("x{}", p + 1));
    if (header != expected) {
      schema(name + " line 1", fmt::format("header must be '{}'", fmt::join(expected, ",")));
    }
    int line_no = 1;
    while (std::getline(csv, line)) {
      ++line_no;
      if (line.empty() || line == "\r") continue;
      const auto cells = split_csv_line(line);
      const std::string where = fmt::format("{} line {}", name, line_no);
      if (cells.size() != expected.size()) {
        schema(where, fmt::format("expected {} fields, found {}", expected.size(), cells.size()));
      }
      int j = -1;
      for (int i = 0; i < static_cast<int>(net.studies.size()); ++i) {
        if (net.studies[i].id == cells[0]) j = i;
      }
      if (j < 0) schema(where + ", field study", "undeclared study '" + cells[0] + "'");
      StudyRecord& s = net.studies[j];
      if (s.kind != StudyKind::FullIPD) schema(where, "IPD rows for aggregate study '" + s.id + "'");
      IpdRow row;
      const long arm = parse_long(cells[1], where + ", field arm");
      const long y = parse_long(cells[2], where + ", field y");
      if (y != 0 && y != 1) schema(where + ", field y", "must be 0 or 1");
      row.y = static_cast<int>(y);
      row.trt = treatment_at(cells[3], where + ", field trt");
      if (arm < 1 || arm > static_cast<long>(s.arms.size()) || s.arms[arm - 1] != row.trt) {
        schema(where + ", field arm", "arm number does not match the study's arm list");
      }
      row.x_raw.resize(P);
      for (int p = 0; p < P; ++p) {
        row.x_raw[p] = parse_double(cells[4 + p], fmt::format("{}, field x{}", where, p + 1));
        if (!std::isfinite(row.x_raw[p])) schema(fmt::format("{}, field x{}", where, p + 1), "not finite");
      }
      s.ipd.push_back(std::move(row));
    }
  }

  for (std::size_t j = 0; j < net.studies.size(); ++j) {
    StudyRecord& s = net.studies[j];
    if (s.kind != StudyKind::FullIPD) continue;
    if (s.ipd.empty()) schema(fmt::format("$.studies[{}]", j), "FullIPD study '" + s.id + "' has no IPD rows");
    const auto tally = tally_counts(s, T);
    if (counts_given[j]) {
      for (int t = 0; t < T; ++t) {
        for (int y = 0; y <= 1; ++y) {
          if (tally[t][y] != s.counts[t][y]) {
            throw Error(ErrorKind::ConsistencyError,
                        fmt::format("study {}: cell (y={}, t={}) has count {} but IPD tallies {}", s.id, y,
                                    net.treatments[t].name, s.counts[t][y], tally[t][y]));
          }
        }
      }
    }
    s.counts = tally;
  }

  if (doc.contains("truth")) {
    const ParameterLayout layout(net);
    const auto names = layout.names(net);
    const json& jt = doc["truth"];
    Vector truth(layout.dim());
    for (int i = 0; i < layout.dim(); ++i) truth[i] = get_field<double>(jt, names[i].c_str(), "$.truth");
    file.truth = truth;
  }

  if (centers_given) {
    apply_covariate_scale(net);
    build_grids(net);
  } else {
    center_covariates(net);
  }
  return file;
}

void save_network(const NetworkFile& file, const fs::path& json_path) {
  const Network& net = file.network;
  const std::string csv_name = json_path.stem().string() + "_ipd.csv";
  json doc;
  json trts = json::array();
  for (const Treatment& t : net.treatments) {
    json jt{{"name", t.name}};
    if (!t.treatment_class.empty()) jt["class"] = t.treatment_class;
    trts.push_back(jt);
  }
  doc["treatments"] = trts;
  doc["reference"] = net.treatments.at(net.reference).name;
  doc["class_shared"] = net.class_shared;
  doc["integration_points"] = net.integration_points;
  json covs = json::array();
  for (const Covariate& c : net.covariates) {
    json jc{{"name", c.name},
            {"kind", c.kind == CovariateKind::Binary ? "binary" : "continuous"},
            {"divisor", c.divisor},
            {"center", c.center}};
    if (c.threshold) jc["threshold"] = *c.threshold;
    covs.push_back(jc);
  }
  doc["covariates"] = covs;
  doc["ipd_csv"] = csv_name;
  json studies = json::array();
  for (const StudyRecord& s : net.studies) {
    json js{{"id", s.id}, {"kind", std::string(to_string(s.kind))}};
    json arms = json::array();
    for (int t : s.arms) arms.push_back(net.treatments[t].name);
    js["arms"] = arms;
    json counts = json::object();
    for (int t : s.arms) {
      counts[net.treatments[t].name] = {{"events", s.counts[t][1]}, {"non_events", s.counts[t][0]}};
    }
    js["counts"] = counts;
    if (!s.marginals.empty()) {
      json ms = json::array();
      for (int p = 0; p < net.n_covariates(); ++p) {
        const CovariateMarginal& m = s.marginals[p];
        ms.push_back(net.covariates[p].kind == CovariateKind::Binary
                         ? json{{"prevalence", m.prevalence}}
                         : json{{"mean", m.mean}, {"sd", m.sd}});
      }
      js["marginals"] = ms;
    }
    if (s.correlation) js["correlation"] = matrix_to_json(*s.correlation);
    if (s.subgroups) {
      json gs = json::array();
      for (const SubgroupEntry& e : s.subgroups->entries) {
        gs.push_back({{"covariate", net.covariates[e.covariate].name},
                      {"threshold", e.threshold},
                      {"treatment", net.treatments[e.treatment].name},
                      {"comparator", net.treatments[e.comparator].name},
                      {"value", e.value}});
      }
      js["subgroups"] = gs;
    }
    studies.push_back(js);
  }
  doc["studies"] = studies;
  if (file.truth) {
    const ParameterLayout layout(net);
    const auto names = layout.names(net);
    json jt = json::object();
    for (int i = 0; i < layout.dim(); ++i) jt[names[i]] = (*file.truth)[i];
    doc["truth"] = jt;
  }

  std::ofstream out(json_path);
  if (!out) throw Error(ErrorKind::SchemaError, json_path.string() + ": cannot write");
  out << doc.dump(2) << '\n';

  std::ofstream csv(json_path.parent_path() / csv_name);
  if (!csv) throw Error(ErrorKind::SchemaError, csv_name + ": cannot write");
  csv << "study,arm,y,trt";
  for (int p = 0; p < net.n_covariates(); ++p) csv << ",x" << p + 1;
  csv << '\n';
  for (const StudyRecord& s : net.studies) {
    for (const IpdRow& row : s.ipd) {
      const auto arm = std::find(s.arms.begin(), s.arms.end(), row.trt) - s.arms.begin() + 1;
      csv << fmt::format("{},{},{},{}", s.id, arm, row.y, net.treatments[row.trt].name);
      for (Eigen::Index p = 0; p < row.x_raw.size(); ++p) csv << fmt::format(",{}", row.x_raw[p]);
      csv << '\n';
    }
  }
}

bool structurally_equal(const Network& a, const Network& b, double tol) {
  auto close = [tol](double x, double y) { return std::abs(x - y) <= tol * (1.0 + std::abs(x)); };
  auto mat_close = [&](const Matrix& x, const Matrix& y) {
    if (x.rows() != y.rows() || x.cols() != y.cols()) return false;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      if (!close(x.data()[i], y.data()[i])) return false;
    }
    return true;
  };
  if (a.n_treatments() != b.n_treatments() || a.reference != b.reference ||
      a.n_covariates() != b.n_covariates() || a.studies.size() != b.studies.size() ||
      a.class_shared != b.class_shared || a.integration_points != b.integration_points) {
    return false;
  }
  for (int t = 0; t < a.n_treatments(); ++t) {
    if (a.treatments[t].name != b.treatments[t].name ||
        a.treatments[t].treatment_class != b.treatments[t].treatment_class) {
      return false;
    }
  }
  for (int p = 0; p < a.n_covariates(); ++p) {
    const Covariate& x = a.covariates[p];
    const Covariate& y = b.covariates[p];
    if (x.name != y.name || x.kind != y.kind || !close(x.divisor, y.divisor) || !close(x.center, y.center) ||
        x.threshold.has_value() != y.threshold.has_value() || (x.threshold && !close(*x.threshold, *y.threshold))) {
      return false;
    }
  }
  for (std::size_t j = 0; j < a.studies.size(); ++j) {
    const StudyRecord& x = a.studies[j];
    const StudyRecord& y = b.studies[j];
    if (x.id != y.id || x.kind != y.kind || x.arms != y.arms || x.counts != y.counts ||
        x.ipd.size() != y.ipd.size() || x.marginals.size() != y.marginals.size() ||
        x.correlation.has_value() != y.correlation.has_value() ||
        x.subgroups.has_value() != y.subgroups.has_value()) {
      return false;
    }
    for (std::size_t i = 0; i < x.ipd.size(); ++i) {
      if (x.ipd[i].y != y.ipd[i].y || x.ipd[i].trt != y.ipd[i].trt || !mat_close(x.ipd[i].x_raw, y.ipd[i].x_raw)) {
        return false;
      }
    }
    for (std::size_t p = 0; p < x.marginals.size(); ++p) {
      if (!close(x.marginals[p].mean, y.marginals[p].mean) || !close(x.marginals[p].sd, y.marginals[p].sd) ||
          !close(x.marginals[p].prevalence, y.marginals[p].prevalence)) {
        return false;
      }
    }
    if (x.correlation && !mat_close(*x.correlation, *y.correlation)) return false;
    if (!mat_close(x.grid_raw, y.grid_raw)) return false;
    if (x.subgroups) {
      const auto& ex = x.subgroups->entries;
      const auto& ey = y.subgroups->entries;
      if (ex.size() != ey.size()) return false;
      for (std::size_t d = 0; d < ex.size(); ++d) {
        if (ex[d].covariate != ey[d].covariate || ex[d].treatment != ey[d].treatment ||
            ex[d].comparator != ey[d].comparator || !close(ex[d].threshold, ey[d].threshold) ||
            !close(ex[d].value, ey[d].value)) {
          return false;
        }
      }
    }
  }
  return true;
}

}  // namespace synlik
