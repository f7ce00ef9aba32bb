#include "cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "synlik/experiment.hpp"

#ifndef SYNLIK_GIT_DESCRIBE
#define SYNLIK_GIT_DESCRIBE "unknown"
#endif

namespace synlik::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Divergence:
    case ErrorKind::AllDivergent:
    case ErrorKind::NonFiniteDensity:
    case ErrorKind::InsufficientDraws:
    case ErrorKind::DegenerateMass:
    case ErrorKind::SingularAfterEscalation:
    case ErrorKind::NonFiniteWeight:
    case ErrorKind::InsufficientTail:
      return kExitSampler;
    case ErrorKind::InvalidArgument:
      return kExitUsage;
    default:
      return kExitData;
  }
}

std::string_view to_string(Band b) {
  switch (b) {
    case Band::Pass: return "PASS";
    case Band::Warn: return "WARN";
    case Band::Fail: return "FAIL";
  }
  return "?";
}

Band khat_band(std::optional<double> k_hat) {
  if (!k_hat) return Band::Pass;
  if (*k_hat < kKhatGood) return Band::Pass;
  if (*k_hat < kKhatReliable) return Band::Warn;
  return Band::Fail;
}

Band rhat_band(double r) { return r < 1.01 ? Band::Pass : (r < 1.05 ? Band::Warn : Band::Fail); }

namespace {

double json_number(const json& j) {
  return j.is_number() ? j.get<double>() : std::numeric_limits<double>::infinity();
}

json number_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

struct SamplerOpts {
  std::uint64_t seed = 1;
  int threads = 0;
  int chains = 4;
  int warmup = 1000;
  int iters = 1000;
  double target_accept = 0.8;
  int max_steps = 64;
  std::string out = "out";

  void add_to(CLI::App& app) {
    app.add_option("--seed", seed, "Master seed (SYNLIK_SEED overrides)")->capture_default_str();
    app.add_option("--threads", threads, "Maximum concurrent chains (0: one per chain)")->capture_default_str();
    app.add_option("--chains", chains, "Number of chains")->capture_default_str();
    app.add_option("--warmup", warmup, "Warmup iterations per chain")->capture_default_str();
    app.add_option("--iters", iters, "Retained iterations per chain")->capture_default_str();
    app.add_option("--target-accept", target_accept, "Dual averaging acceptance target")->capture_default_str();
    app.add_option("--max-steps", max_steps, "Largest leapfrog step count")->capture_default_str();
    app.add_option("--out", out, "Output directory")->capture_default_str();
  }

  void apply_env() {
    if (const char* env = std::getenv("SYNLIK_SEED"); env && *env) {
      try {
        std::size_t pos = 0;
        seed = std::stoull(env, &pos);
        if (pos != std::strlen(env)) throw std::invalid_argument(env);
      } catch (const std::exception&) {
        throw Error(ErrorKind::InvalidArgument, fmt::format("SYNLIK_SEED='{}' is not an integer", env));
      }
    }
  }

  HmcConfig hmc() const {
    HmcConfig h;
    h.n_chains = chains;
    h.n_warmup = warmup;
    h.n_sampling = iters;
    h.target_accept = target_accept;
    h.max_leapfrog_steps = max_steps;
    h.seed = seed;
    h.threads = threads;
    h.validate();
    return h;
  }

  json snapshot() const {
    return {{"seed", seed},     {"threads", threads},           {"chains", chains},
            {"warmup", warmup}, {"iters", iters},               {"target_accept", target_accept},
            {"max_steps", max_steps}, {"out", out}};
  }
};

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorKind::SchemaError, path.string() + ": cannot write");
  return f;
}

void write_draws(const fs::path& path, const std::vector<std::string>& names,
                 const std::vector<ChainDraws>& chains) {
  auto f = open_out(path);
  f << "chain,iteration";
  for (const auto& n : names) f << ',' << n;
  f << '\n';
  for (std::size_t c = 0; c < chains.size(); ++c) {
    const Matrix& d = chains[c].draws;
    for (Eigen::Index i = 0; i < d.rows(); ++i) {
      f << c + 1 << ',' << i + 1;
      for (Eigen::Index p = 0; p < d.cols(); ++p) f << fmt::format(",{}", d(i, p));
      f << '\n';
    }
  }
}

void write_psis(const fs::path& path, const MethodFit& fit) {
  auto f = open_out(path);
  f << "draw,log_weight_raw,log_weight_smoothed,weight\n";
  const Vector w = fit.psis->normalized_weights();
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    f << fmt::format("{},{},{},{}\n", i + 1, fit.raw_log_weights[i], fit.psis->log_weights_smoothed[i], w[i]);
  }
}

json method_diagnostics(const MethodFit& fit) {
  json params = json::array();
  for (std::size_t p = 0; p < fit.names.size(); ++p) {
    params.push_back({{"name", fit.names[p]},
                      {"rhat", number_or_null(fit.rhat[p].value)},
                      {"zero_variance", fit.rhat[p].zero_variance},
                      {"ess", number_or_null(fit.ess[p])}});
  }
  json chains = json::array();
  for (const ChainDraws& c : fit.chains) {
    chains.push_back({{"stepsize", c.stepsize}, {"divergences", c.n_divergent()}, {"grad_evals", c.grad_evals}});
  }
  json out{{"method", fit.method},
           {"parameters", params},
           {"divergences", fit.n_divergent()},
           {"chains", chains}};
  if (fit.psis) {
    out["psis"] = {{"k_hat", fit.psis->k_hat ? json(*fit.psis->k_hat) : json(nullptr)},
                   {"n_eff", fit.psis->n_eff},
                   {"tail_size", fit.psis->tail_size}};
  }
  return out;
}

json chain_summary(const MethodFit& fit) {
  json arr = json::array();
  for (const ChainDraws& c : fit.chains) {
    arr.push_back({{"stepsize", c.stepsize}, {"divergences", c.n_divergent()}, {"grad_evals", c.grad_evals}});
  }
  return arr;
}

void write_manifest(const fs::path& dir, const std::string& command, const std::vector<std::string>& args,
                    const json& config, std::uint64_t seed, double seconds, const json& chains) {
  json m{{"command", command},
         {"args", args},
         {"config", config},
         {"seed", seed},
         {"git_describe", SYNLIK_GIT_DESCRIBE},
         {"wall_time_seconds", seconds},
         {"chains", chains}};
  open_out(dir / "manifest.json") << m.dump(2) << '\n';
}

std::string cell(double x, const char* spec = "{:.4f}") {
  if (std::isnan(x)) return "NA";
  return fmt::format(fmt::runtime(spec), x);
}

std::string slug(std::string s) {
  std::string out;
  for (char c : s) {
    if (std::isalnum(static_cast<unsigned char>(c))) out += static_cast<char>(std::tolower(c));
    else if (!out.empty() && out.back() != '-') out += '-';
  }
  while (!out.empty() && out.back() == '-') out.pop_back();
  return out;
}

std::vector<ToyVariant> parse_variants(const std::string& list) {
  std::vector<ToyVariant> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(parse_toy_variant(item));
  }
  if (out.empty()) throw Error(ErrorKind::InvalidArgument, "no variants requested");
  return out;
}

int cmd_run_simple(const ToyRunConfig& base, SamplerOpts opts, const std::string& variants, bool no_psis,
                   const std::vector<std::string>& args, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  opts.apply_env();
  ToyRunConfig cfg = base;
  cfg.variants = parse_variants(variants);
  cfg.psis = !no_psis;
  cfg.hmc = opts.hmc();
  cfg.seed = opts.seed;
  if (cfg.m >= cfg.n) throw Error(ErrorKind::InvalidArgument, "--m must be smaller than --n");
  const ToyRun run = run_toy(cfg);

  const fs::path dir(opts.out);
  fs::create_directories(dir);
  auto table = open_out(dir / "table.csv");
  auto timing = open_out(dir / "timing.csv");
  table << "method,mean,sd,cri_lower,cri_upper,cri_ratio,grad_evals,rhat,khat\n";
  timing << "method,seconds\n";
  json diag{{"methods", json::array()}};
  json chains = json::object();
  out << fmt::format("{:<26}{:>8}{:>8}{:>20}{:>10}{:>12}{:>8}{:>8}\n", "Method", "Mean", "SD", "95% CrI",
                     "CrI ratio", "Grad evals", "R-hat", "k-hat");
  for (const ToyRow& row : run.rows) {
    const MethodFit& f = row.fit;
    const PosteriorSummary& s = f.summary[0];
    const std::string khat = f.psis ? (f.psis->k_hat ? cell(*f.psis->k_hat, "{:.3f}") : "NoTail") : "";
    table << fmt::format("{},{},{},{},{},{},{},{},{}\n", f.method, cell(s.mean), cell(s.sd), cell(s.q025),
                         cell(s.q975), cell(row.cri_ratio, "{:.2f}"), f.grad_evals(), cell(f.rhat[0].value),
                         khat);
    timing << fmt::format("{},{:.3f}\n", f.method, f.seconds);
    out << fmt::format("{:<26}{:>8.2f}{:>8.2f}{:>20}{:>10}{:>12}{:>8.3f}{:>8}\n", f.method, s.mean, s.sd,
                       fmt::format("({:.2f}, {:.2f})", s.q025, s.q975), cell(row.cri_ratio, "{:.2f}"),
                       f.grad_evals(), f.rhat[0].value, khat.empty() ? "--" : khat);
    diag["methods"].push_back(method_diagnostics(f));
    chains[f.method] = chain_summary(f);
    if (f.psis) write_psis(dir / "psis.csv", f);
    else write_draws(dir / fmt::format("draws_{}.csv", slug(f.method)), f.names, f.chains);
  }
  diag["analytic_oracle"] = {{"mean", run.analytic_oracle.mean}, {"sd", run.analytic_oracle.sd}};
  open_out(dir / "diagnostics.json") << diag.dump(2) << '\n';
  json config = opts.snapshot();
  config.update({{"n", cfg.n}, {"m", cfg.m}, {"c", cfg.c}, {"sigma", cfg.sigma}, {"mu", cfg.mu_true},
                 {"B", cfg.B}, {"B_disc", cfg.B_disc}, {"variants", variants}, {"psis", cfg.psis}});
  write_manifest(dir, "run-simple", args, config, opts.seed,
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), chains);
  return kExitOk;
}

struct NmrOpts {
  std::string network;
  bool simulate = false;
  std::vector<std::string> masks;
  int B = kDefaultNmrB;
  int B_disc = 5001;
  int K = 0;
  int n = 400;
  std::optional<std::uint64_t> sim_seed;
};

int cmd_run_nmr(const NmrOpts& o, SamplerOpts opts, const std::vector<std::string>& args, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  opts.apply_env();
  if (o.network.empty() == !o.simulate) {
    throw Error(ErrorKind::InvalidArgument, "give exactly one of --network and --simulate");
  }
  NetworkFile base;
  std::vector<std::string> masks = o.masks;
  if (o.simulate) {
    SimConfig sim = desk_sim_config(o.sim_seed.value_or(opts.seed));
    for (SimStudy& s : sim.studies) s.n = o.n;
    if (o.K > 0) sim.integration_points = o.K;
    if (masks.empty()) {
      for (const auto& [id, mode] : sim.masking) masks.push_back(id);
    }
    base = simulate_network(sim);
  } else {
    base = load_network(o.network);
    if (o.K > 0) {
      base.network.integration_points = o.K;
      build_grids(base.network);
    }
  }

  std::optional<NetworkFile> oracle;
  NetworkFile ml = base;
  NetworkFile bsl = base;
  if (!masks.empty()) {
    oracle = base;
    for (const auto& id : masks) {
      ml = mask_study(ml, id, MaskMode::DropCovariates);
      bsl = mask_study(bsl, id, MaskMode::DropCovariatesKeepSubgroups);
    }
  } else {
    for (StudyRecord& s : ml.network.studies) {
      if (s.kind == StudyKind::PartialIPDSubgroups) {
        s.kind = StudyKind::PartialIPD;
        s.subgroups.reset();
      }
    }
  }

  NmrRunConfig cfg;
  cfg.B = o.B;
  cfg.B_disc = o.B_disc;
  cfg.hmc = opts.hmc();
  cfg.crn_seed = splitmix64(opts.seed ^ 0xc7);
  NmrRun run;
  try {
    run = run_nmr(oracle, ml, bsl, cfg);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::AllDivergent) {
      throw Error(ErrorKind::AllDivergent,
                  std::string(e.what()) + "; try a larger --B or a higher --target-accept (smaller step size)");
    }
    throw;
  }

  const fs::path dir(opts.out);
  fs::create_directories(dir);
  std::vector<const MethodFit*> methods;
  if (run.oracle) methods.push_back(&*run.oracle);
  methods.push_back(&run.ml_nmr);
  methods.push_back(&run.bsl);
  if (run.bsl_is) methods.push_back(&*run.bsl_is);

  auto summary = open_out(dir / "summary.csv");
  summary << "parameter,method,mean,sd,q025,q500,q975,rhat,ess\n";
  json forest = json::array();
  json diag{{"methods", json::array()}, {"empty_subgroups", run.empty_subgroups}};
  json chains = json::object();
  auto timing = open_out(dir / "timing.csv");
  timing << "method,seconds\n";
  for (std::size_t p = 0; p < run.names.size(); ++p) {
    for (const MethodFit* f : methods) {
      const PosteriorSummary& s = f->summary[p];
      summary << fmt::format("{},{},{},{},{},{},{},{},{}\n", run.names[p], f->method, s.mean, s.sd, s.q025, s.q500,
                             s.q975, f->rhat[p].value, f->ess[p]);
      forest.push_back({{"parameter", run.names[p]},
                        {"method", f->method},
                        {"mean", s.mean},
                        {"lower", s.q025},
                        {"upper", s.q975}});
    }
  }
  for (const MethodFit* f : methods) {
    diag["methods"].push_back(method_diagnostics(*f));
    chains[f->method] = chain_summary(*f);
    timing << fmt::format("{},{:.3f}\n", f->method, f->seconds);
    if (f->psis) write_psis(dir / "psis.csv", *f);
    else write_draws(dir / fmt::format("draws_{}.csv", slug(f->method)), f->names, f->chains);
  }
  open_out(dir / "forest.json") << forest.dump(2) << '\n';
  open_out(dir / "diagnostics.json") << diag.dump(2) << '\n';
  if (base.truth) {
    auto t = open_out(dir / "truth.csv");
    t << "parameter,value\n";
    for (std::size_t p = 0; p < run.names.size(); ++p) t << fmt::format("{},{}\n", run.names[p], (*base.truth)[p]);
  }
  json config = opts.snapshot();
  config.update({{"network", o.network}, {"simulate", o.simulate}, {"masks", masks}, {"B", o.B},
                 {"B_disc", o.B_disc}, {"K", o.K}, {"n", o.n}});
  if (o.sim_seed) config["sim_seed"] = *o.sim_seed;
  write_manifest(dir, "run-nmr", args, config, opts.seed,
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), chains);

  out << fmt::format("{:<24}", "parameter");
  for (const MethodFit* f : methods) out << fmt::format("{:>26}", f->method);
  out << '\n';
  for (std::size_t p = 0; p < run.names.size(); ++p) {
    out << fmt::format("{:<24}", run.names[p]);
    for (const MethodFit* f : methods) {
      const PosteriorSummary& s = f->summary[p];
      out << fmt::format("{:>26}", fmt::format("{:.3f} ({:.3f}, {:.3f})", s.mean, s.q025, s.q975));
    }
    out << '\n';
  }
  if (run.bsl_is) {
    const auto& k = run.bsl_is->psis->k_hat;
    out << fmt::format("Pareto k-hat: {} [{}], weight n_eff {:.1f}\n", k ? fmt::format("{:.3f}", *k) : "NoTail",
                       to_string(khat_band(k)), run.bsl_is->psis->n_eff);
  }
  if (!run.empty_subgroups.empty()) {
    out << fmt::format("EmptySubgroup: {} subgroup split(s) leave High or Low without integration points\n",
                       run.empty_subgroups.size());
  }
  return kExitOk;
}

int cmd_simulate(std::uint64_t seed, int n, int K, const std::string& out_dir, std::ostream& out) {
  SimConfig sim = desk_sim_config(seed);
  for (SimStudy& s : sim.studies) s.n = n;
  if (K > 0) sim.integration_points = K;
  const NetworkFile full = simulate_network(sim);
  const fs::path dir(out_dir);
  fs::create_directories(dir);
  save_network(full, dir / "network.json");
  save_network(apply_masking(full, sim), dir / "network_masked.json");
  out << fmt::format("wrote {} and {}\n", (dir / "network.json").string(), (dir / "network_masked.json").string());
  return kExitOk;
}

}  // namespace

bool diagnose(const std::string& dir, std::ostream& out) {
  const fs::path path = fs::path(dir) / "diagnostics.json";
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::MissingBundle, "no diagnostics.json in " + dir);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::MissingBundle, path.string() + ": " + e.what());
  }
  bool ok = true;
  for (const json& m : doc.at("methods")) {
    out << "method " << m.at("method").get<std::string>() << '\n';
    double worst = 0.0;
    for (const json& p : m.at("parameters")) {
      const double r = json_number(p.at("rhat"));
      worst = std::max(worst, r);
      out << fmt::format("  R-hat {:<28} {:>8.4f}  {}\n", p.at("name").get<std::string>(), r,
                         to_string(rhat_band(r)));
    }
    const Band mixing = rhat_band(worst);
    ok = ok && mixing != Band::Fail;
    out << fmt::format("  mixing: {} (max R-hat {:.4f})\n", to_string(mixing), worst);
    out << fmt::format("  divergences: {}\n", m.at("divergences").get<int>());
    if (m.contains("psis")) {
      const json& ps = m["psis"];
      const std::optional<double> k =
          ps.at("k_hat").is_number() ? std::optional<double>(ps["k_hat"].get<double>()) : std::nullopt;
      const Band band = khat_band(k);
      ok = ok && band != Band::Fail;
      std::string note;
      if (!k) note = " (NoTail: weights have no tail variance, reweighting is trivially reliable)";
      else if (band == Band::Warn)
        note = " (usable but noisy weights; consider a larger B or more MCMC iterations)";
      else if (band == Band::Fail)
        note = " (unreliable importance sampling; increase B or the number of iterations)";
      out << fmt::format("  Pareto k-hat: {} {}{}\n", k ? fmt::format("{:.3f}", *k) : "NoTail", to_string(band),
                         note);
      out << fmt::format("  weight n_eff: {:.1f}\n", ps.at("n_eff").get<double>());
    }
  }
  return ok;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Synthetic-likelihood ML-NMR inference"};
  app.require_subcommand(1);

  SamplerOpts simple_opts;
  ToyRunConfig toy;
  std::string variants = "oracle,simple,bsl-individual,bsl-continuous";
  bool no_psis = false;
  CLI::App* simple = app.add_subcommand("run-simple", "Toy exceedance example: method comparison table");
  simple->add_option("--n", toy.n, "Total observations")->capture_default_str();
  simple->add_option("--m", toy.m, "Observed values")->capture_default_str();
  simple->add_option("--c", toy.c, "Exceedance threshold")->capture_default_str();
  simple->add_option("--sigma", toy.sigma, "Known SD")->capture_default_str();
  simple->add_option("--mu", toy.mu_true, "True mean used to simulate")->capture_default_str();
  simple->add_option("--B", toy.B, "Synthetic replicates during sampling")->capture_default_str();
  simple->add_option("--B-disc", toy.B_disc, "Discrete replicates for PSIS")->capture_default_str();
  simple->add_option("--variants", variants, "Comma-separated subset of oracle,simple,bsl-individual,bsl-continuous")
      ->capture_default_str();
  simple->add_flag("--no-psis", no_psis, "Skip the PSIS-reweighted row");
  simple_opts.add_to(*simple);

  SamplerOpts nmr_opts;
  NmrOpts nmr;
  std::uint64_t sim_seed_flag = 0;
  CLI::App* run_nmr_cmd = app.add_subcommand("run-nmr", "Oracle / ML-NMR / BSL / BSL-IS network fits");
  run_nmr_cmd->add_option("--network", nmr.network, "Network JSON file");
  run_nmr_cmd->add_flag("--simulate", nmr.simulate, "Use the built-in simulated desk-scale network");
  run_nmr_cmd->add_option("--mask", nmr.masks, "Study id to mask (repeatable)");
  run_nmr_cmd->add_option("--B", nmr.B, "Synthetic replicates during sampling")->capture_default_str();
  run_nmr_cmd->add_option("--B-disc", nmr.B_disc, "Discrete replicates for PSIS")->capture_default_str();
  run_nmr_cmd->add_option("--K", nmr.K, "Integration points (0 keeps the network's value)")->capture_default_str();
  run_nmr_cmd->add_option("--n", nmr.n, "Patients per simulated study")->capture_default_str();
  CLI::Option* sim_seed_opt = run_nmr_cmd->add_option("--sim-seed", sim_seed_flag, "Simulation seed (default --seed)");
  nmr_opts.add_to(*run_nmr_cmd);

  std::uint64_t sim_seed = 1;
  int sim_n = 400;
  int sim_k = 0;
  std::string sim_out = "network";
  CLI::App* simulate = app.add_subcommand("simulate", "Write the simulated desk-scale network");
  simulate->add_option("--seed", sim_seed, "Seed (SYNLIK_SEED overrides)")->capture_default_str();
  simulate->add_option("--n", sim_n, "Patients per study")->capture_default_str();
  simulate->add_option("--K", sim_k, "Integration points (0: default 16)")->capture_default_str();
  simulate->add_option("--out", sim_out, "Output directory")->capture_default_str();

  std::string bundle;
  CLI::App* diag = app.add_subcommand("diagnose", "Report mixing and PSIS diagnostics of an output bundle");
  diag->add_option("dir", bundle, "Output directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*simple) return cmd_run_simple(toy, simple_opts, variants, no_psis, args, out);
    if (*run_nmr_cmd) {
      if (*sim_seed_opt) nmr.sim_seed = sim_seed_flag;
      return cmd_run_nmr(nmr, nmr_opts, args, out);
    }
    if (*simulate) {
      SamplerOpts s;
      s.seed = sim_seed;
      s.apply_env();
      return cmd_simulate(s.seed, sim_n, sim_k, sim_out, out);
    }
    if (*diag) return diagnose(bundle, out) ? kExitOk : kExitSampler;
  } catch (const Error& e) {
    err << "error [" << synlik::to_string(e.kind()) << "]: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace synlik::cli
