#include "synlik/hmc.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <thread>

namespace synlik {

void HmcConfig::validate() const {
  if (n_chains < 1) throw Error(ErrorKind::InvalidArgument, "n_chains must be >= 1");
  if (n_warmup < 1 || n_sampling < 1) {
    throw Error(ErrorKind::InvalidArgument, "n_warmup and n_sampling must be >= 1");
  }
  if (!(target_accept > 0.0 && target_accept < 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "target_accept must lie in (0, 1)");
  }
  if (max_leapfrog_steps < 1) throw Error(ErrorKind::InvalidArgument, "max_leapfrog_steps < 1");
  if (!(init_radius >= 0.0)) throw Error(ErrorKind::InvalidArgument, "init_radius < 0");
}

int ChainDraws::n_divergent() const {
  return static_cast<int>(std::count(divergence_flags.begin(), divergence_flags.end(), 1));
}

namespace {

double kinetic(const Vector& p, const Vector& mass_diag) {
  return 0.5 * (p.array().square() / mass_diag.array()).sum();
}

// Returns false when the density could not be evaluated.
bool try_evaluate(const LogDensityModel& model, const Vector& theta, LogDensity& out) {
  try {
    out = evaluate_checked(model, theta);
    return true;
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::DimensionMismatch) throw;
    return false;
  }
}

}  // namespace

LeapfrogResult leapfrog(const LogDensityModel& model, const Vector& theta, const LogDensity& start,
                        const Vector& momentum, double stepsize, int n_steps,
                        const Vector& mass_diag) {
  if (!(stepsize > 0.0)) throw Error(ErrorKind::InvalidArgument, "leapfrog: stepsize <= 0");
  if (mass_diag.size() != theta.size() || (mass_diag.array() <= 0.0).any()) {
    throw Error(ErrorKind::InvalidArgument, "leapfrog: mass_diag must be positive, length dim");
  }
  LeapfrogResult r;
  r.theta = theta;
  r.momentum = momentum;
  r.end = start;
  const double h0 = -start.value + kinetic(momentum, mass_diag);

  for (int step = 0; step < n_steps; ++step) {
    r.momentum += 0.5 * stepsize * r.end.gradient;
    r.theta.array() += stepsize * r.momentum.array() / mass_diag.array();
    ++r.grad_evals;
    if (!try_evaluate(model, r.theta, r.end)) {
      r.divergent = true;
      r.energy_error = std::numeric_limits<double>::infinity();
      return r;
    }
    r.momentum += 0.5 * stepsize * r.end.gradient;
  }
  const double h1 = -r.end.value + kinetic(r.momentum, mass_diag);
  r.energy_error = h1 - h0;
  if (!std::isfinite(r.energy_error) || r.energy_error > kDivergenceThreshold) {
    r.divergent = true;
  }
  return r;
}

LeapfrogResult leapfrog(const LogDensityModel& model, const Vector& theta, const Vector& momentum,
                        double stepsize, int n_steps, const Vector& mass_diag) {
  const LogDensity start = evaluate_checked(model, theta);
  return leapfrog(model, theta, start, momentum, stepsize, n_steps, mass_diag);
}

namespace {

class DualAveraging {
 public:
  DualAveraging(double stepsize, double target) : mu_(std::log(10.0 * stepsize)), target_(target) {}

  double update(double accept) {
    ++t_;
    const double t = static_cast<double>(t_);
    const double w = 1.0 / (t + kT0);
    h_bar_ = (1.0 - w) * h_bar_ + w * (target_ - accept);
    const double log_eps = mu_ - std::sqrt(t) / kGamma * h_bar_;
    const double eta = std::pow(t, -kKappa);
    log_eps_bar_ = eta * log_eps + (1.0 - eta) * log_eps_bar_;
    return std::exp(log_eps);
  }

  double final_stepsize() const { return std::exp(log_eps_bar_); }

 private:
  static constexpr double kGamma = 0.05;
  static constexpr double kT0 = 10.0;
  static constexpr double kKappa = 0.75;
  double mu_;
  double target_;
  double h_bar_ = 0.0;
  double log_eps_bar_ = 0.0;
  long t_ = 0;
};

Vector draw_momentum(std::mt19937_64& rng, const Vector& mass_diag) {
  std::normal_distribution<double> normal;
  Vector p(mass_diag.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = normal(rng) * std::sqrt(mass_diag[i]);
  return p;
}

// Doubles or halves the step size until a single leapfrog step crosses an
// acceptance probability of 0.5.
double find_reasonable_stepsize(const LogDensityModel& model, const Vector& theta,
                                const LogDensity& start, const Vector& mass_diag, double stepsize,
                                std::mt19937_64& rng, long& grad_evals) {
  const double log_half = std::log(0.5);
  int direction = 0;
  for (int attempt = 0; attempt < 60; ++attempt) {
    const Vector p = draw_momentum(rng, mass_diag);
    const LeapfrogResult r = leapfrog(model, theta, start, p, stepsize, 1, mass_diag);
    grad_evals += r.grad_evals;
    const double log_accept = r.divergent ? -std::numeric_limits<double>::infinity()
                                          : -r.energy_error;
    const int want = log_accept > log_half ? 1 : -1;
    if (direction == 0) direction = want;
    if (want != direction) break;
    const double next = direction == 1 ? stepsize * 2.0 : stepsize * 0.5;
    if (next > 1e3 || next < 1e-10) break;
    stepsize = next;
  }
  return stepsize;
}

}  // namespace

ChainDraws run_chain(const LogDensityModel& model, const HmcConfig& config, int chain_index) {
  config.validate();
  const int dim = model.dim();
  if (dim < 1) throw Error(ErrorKind::InvalidArgument, "model dimension must be >= 1");

  std::mt19937_64 rng = RngStream{config.seed, static_cast<std::uint64_t>(chain_index)}.engine();
  std::uniform_real_distribution<double> init(-config.init_radius, config.init_radius);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> n_steps_dist(1, config.max_leapfrog_steps);

  ChainDraws out;
  Vector theta(dim);
  LogDensity current;
  bool initialized = false;
  for (int attempt = 0; attempt < 100 && !initialized; ++attempt) {
    for (int i = 0; i < dim; ++i) theta[i] = init(rng);
    ++out.grad_evals;
    initialized = try_evaluate(model, theta, current);
  }
  if (!initialized) {
    throw Error(ErrorKind::NonFiniteDensity, "no finite initial point after 100 attempts");
  }

  Vector mass = Vector::Ones(dim);
  double stepsize = find_reasonable_stepsize(model, theta, current, mass, 1.0, rng, out.grad_evals);
  DualAveraging adapt(stepsize, config.target_accept);

  const int stage_one_end = config.n_warmup / 2;
  const int window_begin = config.n_warmup / 4;
  std::vector<Vector> window;

  auto transition = [&](bool& divergent, double& accept) {
    const Vector p = draw_momentum(rng, mass);
    const int n_steps = n_steps_dist(rng);
    const LeapfrogResult r = leapfrog(model, theta, current, p, stepsize, n_steps, mass);
    out.grad_evals += r.grad_evals;
    divergent = r.divergent;
    accept = divergent ? 0.0 : std::min(1.0, std::exp(-r.energy_error));
    if (!divergent && unit(rng) < accept) {
      theta = r.theta;
      current = r.end;
    }
  };

  for (int it = 0; it < config.n_warmup; ++it) {
    bool divergent = false;
    double accept = 0.0;
    transition(divergent, accept);
    stepsize = adapt.update(accept);
    if (it >= window_begin && it < stage_one_end) window.push_back(theta);
    if (it + 1 == stage_one_end && window.size() >= 2) {
      const double n = static_cast<double>(window.size());
      Vector mean = Vector::Zero(dim);
      for (const Vector& w : window) mean += w;
      mean /= n;
      Vector var = Vector::Zero(dim);
      for (const Vector& w : window) var.array() += (w - mean).array().square();
      var /= (n - 1.0);
      var = (n / (n + 5.0)) * var.array() + 5.0 / (n + 5.0);
      mass = var.cwiseInverse();
      stepsize = find_reasonable_stepsize(model, theta, current, mass, stepsize, rng,
                                          out.grad_evals);
      adapt = DualAveraging(stepsize, config.target_accept);
    }
  }
  stepsize = adapt.final_stepsize();

  out.draws.resize(config.n_sampling, dim);
  out.accept_stats.reserve(config.n_sampling);
  out.divergence_flags.reserve(config.n_sampling);
  out.log_density.reserve(config.n_sampling);
  for (int it = 0; it < config.n_sampling; ++it) {
    bool divergent = false;
    double accept = 0.0;
    transition(divergent, accept);
    out.draws.row(it) = theta.transpose();
    out.accept_stats.push_back(accept);
    out.divergence_flags.push_back(divergent ? 1 : 0);
    out.log_density.push_back(current.value);
  }
  out.stepsize = stepsize;
  out.mass_diag = mass;

  if (2 * out.n_divergent() > config.n_sampling) {
    throw Error(ErrorKind::AllDivergent,
                "chain " + std::to_string(chain_index) + ": " + std::to_string(out.n_divergent()) +
                    " of " + std::to_string(config.n_sampling) + " draws diverged");
  }
  return out;
}

std::vector<ChainDraws> run_chains(const LogDensityModel& model, const HmcConfig& config) {
  config.validate();
  std::vector<ChainDraws> chains(config.n_chains);
  std::vector<std::exception_ptr> errors(config.n_chains);
  const int threads = config.threads > 0 ? std::min(config.threads, config.n_chains)
                                         : config.n_chains;

  auto work = [&](int chain) {
    try {
      chains[chain] = run_chain(model, config, chain);
    } catch (...) {
      errors[chain] = std::current_exception();
    }
  };

  if (threads <= 1) {
    for (int c = 0; c < config.n_chains; ++c) work(c);
  } else {
    for (int first = 0; first < config.n_chains; first += threads) {
      std::vector<std::jthread> pool;
      for (int c = first; c < std::min(first + threads, config.n_chains); ++c) {
        pool.emplace_back(work, c);
      }
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return chains;
}

std::vector<Vector> chain_columns(const std::vector<ChainDraws>& chains, int param) {
  std::vector<Vector> cols;
  cols.reserve(chains.size());
  for (const ChainDraws& c : chains) cols.emplace_back(c.draws.col(param));
  return cols;
}

Matrix pooled_draws(const std::vector<ChainDraws>& chains) {
  Eigen::Index rows = 0;
  for (const ChainDraws& c : chains) rows += c.draws.rows();
  const Eigen::Index cols = chains.empty() ? 0 : chains.front().draws.cols();
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const ChainDraws& c : chains) {
    out.middleRows(at, c.draws.rows()) = c.draws;
    at += c.draws.rows();
  }
  return out;
}

namespace {

void check_chains(std::span<const Vector> chains) {
  if (chains.size() < 2) throw Error(ErrorKind::InsufficientDraws, "need at least 2 chains");
  for (const Vector& c : chains) {
    if (c.size() < 4) throw Error(ErrorKind::InsufficientDraws, "need at least 4 draws per chain");
  }
}

std::vector<Vector> split(std::span<const Vector> chains) {
  std::vector<Vector> halves;
  for (const Vector& c : chains) {
    const Eigen::Index half = c.size() / 2;
    halves.emplace_back(c.head(half));
    halves.emplace_back(c.tail(half));
  }
  return halves;
}

double variance(const Vector& v) {
  const double m = v.mean();
  return (v.array() - m).square().sum() / static_cast<double>(v.size() - 1);
}

}  // namespace

RhatResult rhat(std::span<const Vector> chains) {
  check_chains(chains);
  const std::vector<Vector> halves = split(chains);
  const double n = static_cast<double>(halves.front().size());
  const double m = static_cast<double>(halves.size());
  Vector means(halves.size());
  double within = 0.0;
  for (std::size_t i = 0; i < halves.size(); ++i) {
    means[static_cast<Eigen::Index>(i)] = halves[i].mean();
    within += variance(halves[i]);
  }
  within /= m;
  const double between = variance(means);  // B / n
  if (within <= 0.0) {
    if (between <= 0.0) return {1.0, true};
    return {std::numeric_limits<double>::infinity(), false};
  }
  const double var_plus = (n - 1.0) / n * within + between;
  return {std::sqrt(var_plus / within), false};
}

RhatResult rhat(const std::vector<ChainDraws>& chains, int param) {
  const auto cols = chain_columns(chains, param);
  return rhat(std::span<const Vector>(cols));
}

double ess(std::span<const Vector> chains) {
  check_chains(chains);
  std::vector<Vector> halves = split(chains);
  const Eigen::Index n = halves.front().size();
  const std::size_t m = halves.size();

  // Rank normalization over the pooled draws, average ranks for ties.
  const Eigen::Index total = n * static_cast<Eigen::Index>(m);
  std::vector<std::pair<double, Eigen::Index>> order;
  order.reserve(total);
  for (std::size_t c = 0; c < m; ++c) {
    for (Eigen::Index i = 0; i < n; ++i) {
      order.emplace_back(halves[c][i], static_cast<Eigen::Index>(c) * n + i);
    }
  }
  std::sort(order.begin(), order.end());
  std::vector<double> z(total);
  for (Eigen::Index i = 0; i < total;) {
    Eigen::Index j = i;
    while (j + 1 < total && order[j + 1].first == order[i].first) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    const double u = (rank - 0.375) / (static_cast<double>(total) + 0.25);
    for (Eigen::Index k = i; k <= j; ++k) z[order[k].second] = std_normal_quantile(u);
    i = j + 1;
  }
  for (std::size_t c = 0; c < m; ++c) {
    for (Eigen::Index i = 0; i < n; ++i) halves[c][i] = z[static_cast<Eigen::Index>(c) * n + i];
  }

  Vector means(static_cast<Eigen::Index>(m));
  std::vector<Vector> centred(m);
  for (std::size_t c = 0; c < m; ++c) {
    means[static_cast<Eigen::Index>(c)] = halves[c].mean();
    centred[c] = halves[c].array() - halves[c].mean();
  }
  auto mean_acov = [&](Eigen::Index lag) {
    double acc = 0.0;
    for (const Vector& x : centred) {
      acc += x.head(n - lag).dot(x.tail(n - lag)) / static_cast<double>(n);
    }
    return acc / static_cast<double>(m);
  };
  const double nd = static_cast<double>(n);
  const double acov0 = mean_acov(0);
  const double mean_var = acov0 * nd / (nd - 1.0);
  const double var_plus = mean_var * (nd - 1.0) / nd + (m > 1 ? variance(means) : 0.0);
  if (!(var_plus > 0.0)) return std::numeric_limits<double>::quiet_NaN();

  auto rho = [&](Eigen::Index lag) { return 1.0 - (mean_var - mean_acov(lag)) / var_plus; };

  // Geyer's initial positive, monotone sequence over pairs of lags.
  std::vector<double> r{1.0, rho(1)};
  double prev_pair = r[0] + r[1];
  Eigen::Index t = 1;
  while (t + 2 < n) {
    const double even = rho(t + 1);
    const double odd = rho(t + 2);
    double pair = even + odd;
    if (pair < 0.0) break;
    if (pair > prev_pair) {
      const double scale = prev_pair / pair;
      pair = prev_pair;
      r.push_back(even * scale);
      r.push_back(odd * scale);
    } else {
      r.push_back(even);
      r.push_back(odd);
    }
    prev_pair = pair;
    t += 2;
  }
  double tau = -1.0;
  for (double v : r) tau += 2.0 * v;
  tau = std::max(tau, 1.0 / std::log10(static_cast<double>(total)));
  return static_cast<double>(total) / tau;
}

double ess(const std::vector<ChainDraws>& chains, int param) {
  const auto cols = chain_columns(chains, param);
  return ess(std::span<const Vector>(cols));
}

namespace {

double quantile_sorted(const std::vector<double>& sorted, double p) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

PosteriorSummary summarize(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorKind::InsufficientDraws, "summarize: no draws");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  PosteriorSummary s;
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.sd = values.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  s.q025 = quantile_sorted(sorted, 0.025);
  s.q500 = quantile_sorted(sorted, 0.5);
  s.q975 = quantile_sorted(sorted, 0.975);
  return s;
}

}  // namespace synlik
