#include <cmath>

#include "doctest.h"
#include "synlik/netdata.hpp"
#include "synlik/nmr.hpp"

using namespace synlik;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Reference A and treatment B in class X, one covariate on the model scale.
Network two_arm_network() {
  Network net;
  net.treatments = {{"A", ""}, {"B", "X"}};
  net.covariates = {{"x", CovariateKind::Continuous, 1.0, 0.0, 0.0}};
  return net;
}

Vector theta4(double mu, double gamma, double b1, double b2) {
  return (Vector(4) << mu, gamma, b1, b2).finished();
}

StudyRecord counts_study(const Matrix& grid, long a1, long a0, long b1, long b0) {
  StudyRecord s;
  s.id = "S";
  s.kind = StudyKind::PartialIPD;
  s.arms = {0, 1};
  s.counts = {{{a0, a1}}, {{b0, b1}}};
  s.grid = grid;
  s.grid_raw = grid;
  return s;
}

// One study A vs B with one continuous covariate split at its mean.
SimConfig micro_config(int K, int n) {
  SimConfig c;
  c.treatments = {{"A", ""}, {"B", "X"}};
  c.covariates = {{"w", CovariateKind::Continuous, 10.0, 0.0, 80.0}};
  c.studies = {{"M1", {0, 1}, n, {{80.0, 15.0, 0.5}}, std::nullopt}};
  c.integration_points = K;
  c.truth = theta4(-0.2, 0.6, 0.3, -0.5);
  c.masking = {{"M1", MaskMode::DropCovariatesKeepSubgroups}};
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("parameter layout and names") {
  const NetworkFile f = simulate_network(desk_sim_config(1));
  const ParameterLayout layout(f.network);
  CHECK(layout.dim() == 3 + 2 + 3 * 3);
  const auto names = layout.names(f.network);
  CHECK(names[layout.mu(0)] == "mu[S1]");
  CHECK(names[layout.gamma(0)] == "gamma[B]");
  CHECK(names[layout.beta1(2)] == "beta1[prior_bio]");
  CHECK(names[layout.beta2(0, 0)] == "beta2[X,weight]");
  CHECK(layout.gamma_slot(0) == -1);

  const Vector th = Vector::LinSpaced(layout.dim(), -1.0, 1.0);
  CHECK(ParameterVector::unpack(layout, th).pack(layout) == th);
}

TEST_CASE("linear predictor") {
  Network net = two_arm_network();
  net.studies.push_back(counts_study(Matrix::Zero(1, 1), 1, 1, 1, 1));
  const ParameterLayout layout(net);
  const Vector x = Vector::Constant(1, 0.7);
  CHECK(linear_predictor(layout, Vector::Zero(4), 0, 1, x) == 0.0);
  const Vector th = theta4(0.3, -1.1, 0.4, 0.25);
  CHECK(linear_predictor(layout, th, 0, 1, Vector::Zero(1)) == doctest::Approx(0.3 - 1.1));
  CHECK(linear_predictor(layout, th, 0, 0, Vector::Zero(1)) == doctest::Approx(0.3));
  CHECK(linear_predictor(layout, th, 0, 1, x) == doctest::Approx(0.3 - 1.1 + 0.7 * (0.4 + 0.25)));
  CHECK(linear_predictor(layout, th, 0, 0, x) == doctest::Approx(0.3 + 0.7 * 0.4));
  CHECK_THROWS_AS(linear_predictor(layout, th, 0, 1, Vector::Zero(2)), Error);
  CHECK_THROWS_AS(linear_predictor(layout, th, 0, 2, x), Error);
}

TEST_CASE("linear predictor on a random network") {
  const NetworkFile f = simulate_network(desk_sim_config(2));
  const ParameterLayout layout(f.network);
  auto rng = RngStream{4, 4}.engine();
  std::normal_distribution<double> n;
  for (int rep = 0; rep < 20; ++rep) {
    Vector th(layout.dim()), x(3);
    for (int i = 0; i < th.size(); ++i) th[i] = n(rng);
    for (int i = 0; i < 3; ++i) x[i] = n(rng);
    const int j = rep % 3;
    const int t = rep % 3;
    double expect = th[j];
    for (int p = 0; p < 3; ++p) expect += x[p] * th[layout.beta1(p)];
    if (t > 0) {
      expect += th[layout.gamma(t - 1)];
      for (int p = 0; p < 3; ++p) expect += x[p] * th[layout.beta2(t - 1, p)];
    }
    CHECK(linear_predictor(layout, th, j, t, x) == doctest::Approx(expect).epsilon(1e-14));
  }
}

TEST_CASE("full IPD log likelihood") {
  Network net = two_arm_network();
  StudyRecord s;
  s.id = "F";
  s.kind = StudyKind::FullIPD;
  s.arms = {0, 1};
  const double xs[] = {-1.0, 0.5, 2.0, 0.0, -0.3};
  const int ys[] = {1, 0, 1, 1, 0};
  const int ts[] = {0, 0, 1, 1, 1};
  for (int i = 0; i < 5; ++i) {
    IpdRow r;
    r.y = ys[i];
    r.trt = ts[i];
    r.x_raw = r.x = Vector::Constant(1, xs[i]);
    s.ipd.push_back(r);
  }
  s.counts = {{{1, 1}}, {{1, 2}}};
  net.studies.push_back(s);
  const ParameterLayout layout(net);

  CHECK(full_ipd_loglik(net, layout, Vector::Zero(4), 0) == doctest::Approx(5 * std::log(0.5)));

  const Vector th = theta4(0.2, 0.5, 0.3, -0.4);
  double expect = 0.0;
  for (int i = 0; i < 5; ++i) {
    const double eta = 0.2 + (ts[i] ? 0.5 - 0.1 * xs[i] : 0.3 * xs[i]);
    expect += ys[i] ? std::log(sigmoid(eta)) : std::log(1.0 - sigmoid(eta));
  }
  CHECK(std::abs(full_ipd_loglik(net, layout, th, 0) - expect) < 1e-13);

  Vector grad = Vector::Zero(4);
  full_ipd_loglik(net, layout, th, 0, &grad);
  for (int i = 0; i < 4; ++i) {
    Vector up = th, dn = th;
    up[i] += 1e-6;
    dn[i] -= 1e-6;
    const double fd = (full_ipd_loglik(net, layout, up, 0) - full_ipd_loglik(net, layout, dn, 0)) / 2e-6;
    CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-7));
  }

  net.studies[0].kind = StudyKind::PartialIPD;
  CHECK_THROWS_AS(full_ipd_loglik(net, layout, th, 0), Error);
}

TEST_CASE("full IPD saturates without overflow") {
  Network net = two_arm_network();
  StudyRecord s;
  s.id = "F";
  s.arms = {0, 1};
  IpdRow r;
  r.y = 1;
  r.trt = 0;
  r.x_raw = r.x = Vector::Zero(1);
  s.ipd = {r};
  s.counts = {{{0, 1}}, {{0, 0}}};
  net.studies.push_back(s);
  const ParameterLayout layout(net);
  const double v = full_ipd_loglik(net, layout, theta4(900.0, 0, 0, 0), 0);
  CHECK(v <= 0.0);
  CHECK(v > -1e-300);
}

TEST_CASE("marginal log likelihood") {
  Network net = two_arm_network();
  net.studies.push_back(counts_study(Matrix::Zero(1, 1), 12, 30, 25, 17));
  ParameterLayout layout(net);
  const Vector th = theta4(-0.3, 0.9, 0.5, 0.5);
  const double pa = sigmoid(-0.3), pb = sigmoid(0.6);
  const double binom = 12 * std::log(pa) + 30 * std::log(1 - pa) + 25 * std::log(pb) + 17 * std::log(1 - pb);
  CHECK(marginal_loglik(net, layout, th, 0) == doctest::Approx(binom).epsilon(1e-13));

  net.studies[0] = counts_study(Matrix::Zero(1, 1), 0, 0, 0, 0);
  CHECK(marginal_loglik(net, layout, th, 0) == 0.0);

  Matrix grid(4, 1);
  grid << -1.0, 0.0, 0.5, 2.0;
  net.studies[0] = counts_study(grid, 7, 13, 11, 9);
  const Vector t2 = theta4(0.2, 0.5, 0.3, -0.4);
  double qa = 0.0, qb = 0.0;
  for (int k = 0; k < 4; ++k) {
    qa += sigmoid(0.2 + 0.3 * grid(k, 0)) / 4;
    qb += sigmoid(0.7 - 0.1 * grid(k, 0)) / 4;
  }
  const double expect = 7 * std::log(qa) + 13 * std::log(1 - qa) + 11 * std::log(qb) + 9 * std::log(1 - qb);
  CHECK(std::abs(marginal_loglik(net, layout, t2, 0) - expect) < 1e-12);

  Vector grad = Vector::Zero(4);
  marginal_loglik(net, layout, t2, 0, &grad);
  for (int i = 0; i < 4; ++i) {
    Vector up = t2, dn = t2;
    up[i] += 1e-6;
    dn[i] -= 1e-6;
    const double fd = (marginal_loglik(net, layout, up, 0) - marginal_loglik(net, layout, dn, 0)) / 2e-6;
    CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-7));
  }

  net.studies[0].grid.resize(0, 1);
  CHECK_THROWS_AS(marginal_loglik(net, layout, t2, 0), Error);
}

TEST_CASE("pattern probabilities") {
  Network net = two_arm_network();
  net.studies.push_back(counts_study(Matrix::Constant(5, 1, 0.4), 1, 1, 1, 1));
  const ParameterLayout layout(net);
  const Vector th = theta4(0.1, 0.2, 0.3, 0.4);
  const Vector u = pattern_probs(net, layout, th, 0, 1, 1);
  CHECK((u.array() - 0.2).abs().maxCoeff() < 1e-15);

  Matrix grid(2, 1);
  grid << std::log(4.0), -std::log(4.0);
  net.studies[0] = counts_study(grid, 1, 1, 1, 1);
  const Vector p = pattern_probs(net, layout, theta4(0, 0, 1, 0), 0, 1, 0);
  CHECK(p[0] == doctest::Approx(0.8));
  CHECK(p[1] == doctest::Approx(0.2));
}

TEST_CASE("pattern probabilities match Bayes enumeration") {
  Network net = two_arm_network();
  net.covariates.push_back({"z", CovariateKind::Binary, 1.0, 0.0, std::nullopt});
  auto rng = RngStream{12, 0}.engine();
  std::normal_distribution<double> n;
  for (int K : {1, 3, 8}) {
    Matrix grid(K, 2);
    for (int k = 0; k < K; ++k) {
      grid(k, 0) = n(rng);
      grid(k, 1) = k % 2;
    }
    net.studies = {counts_study(grid, 1, 1, 1, 1)};
    const ParameterLayout layout(net);
    Vector th(layout.dim());
    for (int i = 0; i < th.size(); ++i) th[i] = n(rng);
    for (int t = 0; t < 2; ++t) {
      for (int y = 0; y < 2; ++y) {
        std::vector<double> joint(K);
        double total = 0.0;
        for (int k = 0; k < K; ++k) {
          double eta = th[0];
          for (int p = 0; p < 2; ++p) eta += grid(k, p) * th[layout.beta1(p)];
          if (t == 1) {
            eta += th[layout.gamma(0)];
            for (int p = 0; p < 2; ++p) eta += grid(k, p) * th[layout.beta2(0, p)];
          }
          joint[k] = (1.0 / K) * (y ? sigmoid(eta) : 1.0 - sigmoid(eta));
          total += joint[k];
        }
        const Vector got = pattern_probs(net, layout, th, 0, y, t);
        for (int k = 0; k < K; ++k) CHECK(std::abs(got[k] - joint[k] / total) < 1e-12);
      }
    }
  }
}

TEST_CASE("subgroup log odds ratio difference") {
  const Table2x2 t{5, 5, 2, 8};
  CHECK(subgroup_logor_diff(t, t) == 0.0);
  const Table2x2 high{6, 4, 2, 8};
  CHECK(std::abs(subgroup_logor_diff(high, t) - 0.36772478012531735326) < 1e-12);
  CHECK(std::isfinite(subgroup_logor_diff({0, 10, 3, 7}, {4, 6, 0, 10})));
  CHECK_THROWS_AS(subgroup_logor_diff({-1, 1, 1, 1}, t), Error);
}

TEST_CASE("bsl study on a micro fixture") {
  const SimConfig cfg = micro_config(2, 300);
  const NetworkFile masked = apply_masking(simulate_network(cfg), cfg);
  const Network& net = masked.network;
  const ParameterLayout layout(net);
  REQUIRE(net.studies[0].subgroups);
  CHECK(net.studies[0].subgroups->dim() == 1);

  const Vector th = cfg.truth;
  std::vector<double> cont;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const BslStudy s(net, 0, 50, seed);
    cont.push_back(s.evaluate(net, layout, th).l_cont);
  }
  double mean = 0.0, var = 0.0;
  for (double v : cont) mean += v / cont.size();
  for (double v : cont) var += (v - mean) * (v - mean) / (cont.size() - 1);
  const BslStudy s(net, 0, 50, 1);
  const DiscreteState st = s.discrete_state(net, layout, th);
  const double disc = discrete_synth_loglik(st, s.s_obs(), 10000, RngStream{9, 9}).value;
  CHECK(std::abs(mean - disc) < 3 * std::sqrt(var));
  CHECK(s.empty_subgroups().empty());
}

TEST_CASE("bsl study rejects studies without subgroups") {
  const SimConfig cfg = micro_config(4, 100);
  const NetworkFile full = simulate_network(cfg);
  CHECK_THROWS_AS(BslStudy(full.network, 0, 20, 1), Error);
}

TEST_CASE("bsl study peaks where observed matches the synthetic mean") {
  const SimConfig cfg = micro_config(4, 200);
  NetworkFile masked = apply_masking(simulate_network(cfg), cfg);
  Network& net = masked.network;
  const ParameterLayout layout(net);
  const BslStudy probe(net, 0, 40, 5);
  const SubgroupSummarySet& sg = *net.studies[0].subgroups;
  // l_cont is quadratic in the observed value; locate its vertex.
  auto l_at = [&](double v) {
    net.studies[0].subgroups->entries[0].value = v;
    return BslStudy(net, 0, 40, 5).evaluate(net, layout, cfg.truth).l_cont;
  };
  const double v0 = sg.entries[0].value;
  const double f0 = l_at(v0 - 0.1), f1 = l_at(v0), f2 = l_at(v0 + 0.1);
  const double vertex = v0 - 0.1 * (f2 - f0) / (2 * (f2 - 2 * f1 + f0));
  const double peak = l_at(vertex);
  CHECK(peak >= l_at(vertex + 0.05));
  CHECK(peak >= l_at(vertex - 0.05));
  CHECK(probe.dim() == 1);
}

TEST_CASE("network posterior components") {
  Network empty = two_arm_network();
  const NetworkModel prior_only(empty, 10, 1);
  Vector th = Vector::Constant(prior_only.dim(), 0.3);
  CHECK(prior_only.evaluate(th).value == doctest::Approx(prior_only.log_prior(th)));

  const NetworkFile full = simulate_network(desk_sim_config(4));
  const NetworkModel m(full.network, 10, 1);
  th = *full.truth;
  double expect = m.log_prior(th);
  for (int j = 0; j < 3; ++j) expect += full_ipd_loglik(full.network, m.layout(), th, j);
  CHECK(m.evaluate(th).value == doctest::Approx(expect).epsilon(1e-13));
  CHECK(m.bsl_studies().empty());
}

TEST_CASE("network gradient matches finite differences") {
  const SimConfig cfg = desk_sim_config(6);
  const NetworkFile masked = apply_masking(simulate_network(cfg), cfg);
  const NetworkModel m(masked.network, 100, 7);
  REQUIRE(m.bsl_studies().size() == 1);
  auto rng = RngStream{6, 1}.engine();
  std::normal_distribution<double> n(0.0, 0.3);
  for (int rep = 0; rep < 5; ++rep) {
    Vector th = cfg.truth;
    for (int i = 0; i < th.size(); ++i) th[i] += n(rng);
    CHECK(finite_diff_check(m, th).max_rel_error < 1e-5);
  }
}

TEST_CASE("network likelihood pair") {
  const SimConfig cfg = desk_sim_config(8);
  const NetworkFile masked = apply_masking(simulate_network(cfg), cfg);
  const NetworkModel m(masked.network, 100, 7);
  const LikelihoodPair a = m.likelihood_pair(cfg.truth, 500, RngStream{1, 1});
  const LikelihoodPair b = m.likelihood_pair(cfg.truth, 500, RngStream{1, 1});
  CHECK(a.l_disc == b.l_disc);
  CHECK(std::isfinite(a.l_cont));
  CHECK(std::abs(a.l_disc - a.l_cont) < 5.0);
}
