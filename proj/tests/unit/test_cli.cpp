#include <algorithm>
#include <cstdlib>
#include <iostream>
#include <sstream>

#include "cli.hpp"
#include "doctest.h"
#include "json.hpp"
#include "temp_dir.hpp"

using namespace synlik;
using test::TempDir;
using test::slurp;

namespace {

int run_cli(std::vector<std::string> args, std::string* out_text = nullptr) {
  unsetenv("SYNLIK_SEED");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (out_text) *out_text = out.str() + err.str();
  return code;
}

std::vector<std::string> quick_simple(const std::string& dir, const std::string& seed) {
  return {"run-simple", "--out", dir, "--seed", seed, "--warmup", "200", "--iters", "200", "--chains", "2",
          "--B-disc", "100"};
}

void write_bundle(const TempDir& dir, const nlohmann::json& khat, double rhat) {
  const nlohmann::json doc{
      {"methods",
       {{{"method", "BSL-IS"},
         {"parameters", {{{"name", "mu"}, {"rhat", rhat}, {"zero_variance", false}, {"ess", 900.0}}}},
         {"divergences", 0},
         {"psis", {{"k_hat", khat}, {"n_eff", 700.0}, {"tail_size", 90}}}}}}};
  dir.write("diagnostics.json", doc.dump());
}

}  // namespace

TEST_CASE("bands") {
  CHECK(cli::khat_band(std::nullopt) == cli::Band::Pass);
  CHECK(cli::khat_band(0.3) == cli::Band::Pass);
  CHECK(cli::khat_band(0.598) == cli::Band::Warn);
  CHECK(cli::khat_band(0.7) == cli::Band::Fail);
  CHECK(cli::rhat_band(1.005) == cli::Band::Pass);
  CHECK(cli::rhat_band(1.03) == cli::Band::Warn);
  CHECK(cli::rhat_band(1.2) == cli::Band::Fail);
}

TEST_CASE("exit codes") {
  CHECK(cli::exit_code(ErrorKind::SchemaError) == cli::kExitData);
  CHECK(cli::exit_code(ErrorKind::AllDivergent) == cli::kExitSampler);
  CHECK(cli::exit_code(ErrorKind::InvalidArgument) == cli::kExitUsage);
  CHECK(run_cli({}) == cli::kExitUsage);
  CHECK(run_cli({"run-simple", "--bogus"}) == cli::kExitUsage);
  CHECK(run_cli({"run-nmr", "--network", "/nonexistent.json", "--out", "/tmp/x"}) == cli::kExitData);
}

TEST_CASE("run-simple writes a replayable bundle") {
  TempDir a, b;
  std::string text;
  REQUIRE(run_cli(quick_simple(a.path().string(), "5"), &text) == cli::kExitOk);
  REQUIRE(run_cli(quick_simple(b.path().string(), "5")) == cli::kExitOk);
  for (const char* f : {"table.csv", "draws_oracle-complete-data.csv", "draws_bsl-continuous.csv", "psis.csv"}) {
    INFO(f);
    REQUIRE(std::filesystem::exists(a.path() / f));
    CHECK(slurp(a.path() / f) == slurp(b.path() / f));
  }
  const std::string table = slurp(a.path() / "table.csv");
  CHECK(table.rfind("method,mean,sd,cri_lower,cri_upper,cri_ratio,grad_evals,rhat,khat\n", 0) == 0);
  CHECK(std::count(table.begin(), table.end(), '\n') == 6);
  const auto manifest = nlohmann::json::parse(slurp(a.path() / "manifest.json"));
  CHECK(manifest["seed"] == 5);
  CHECK(manifest["command"] == "run-simple");
  CHECK(run_cli({"diagnose", a.path().string()}) != cli::kExitUsage);
}

TEST_CASE("run-simple with only the oracle") {
  TempDir a;
  auto args = quick_simple(a.path().string(), "2");
  args.insert(args.end(), {"--variants", "oracle"});
  REQUIRE(run_cli(args) == cli::kExitOk);
  const std::string table = slurp(a.path() / "table.csv");
  CHECK(std::count(table.begin(), table.end(), '\n') == 2);
  CHECK(table.find(",1.00") != std::string::npos);
}

TEST_CASE("seed from the environment") {
  TempDir a, b;
  REQUIRE(run_cli(quick_simple(a.path().string(), "9")) == cli::kExitOk);
  setenv("SYNLIK_SEED", "9", 1);
  std::ostringstream out, err;
  REQUIRE(cli::run(quick_simple(b.path().string(), "1"), out, err) == cli::kExitOk);
  unsetenv("SYNLIK_SEED");
  CHECK(slurp(a.path() / "draws_oracle-complete-data.csv") == slurp(b.path() / "draws_oracle-complete-data.csv"));
}

TEST_CASE("simulate writes loadable networks") {
  TempDir a;
  REQUIRE(run_cli({"simulate", "--out", a.path().string(), "--n", "60", "--seed", "3"}) == cli::kExitOk);
  CHECK(std::filesystem::exists(a.path() / "network.json"));
  CHECK(std::filesystem::exists(a.path() / "network_masked.json"));
}

TEST_CASE("diagnose bands") {
  TempDir dir;
  std::string text;
  write_bundle(dir, 0.598, 1.002);
  CHECK(run_cli({"diagnose", dir.path().string()}, &text) == cli::kExitOk);
  CHECK(text.find("0.598 WARN") != std::string::npos);
  CHECK(text.find("larger B") != std::string::npos);
  CHECK(text.find("mixing: PASS") != std::string::npos);

  write_bundle(dir, nullptr, 1.002);
  CHECK(run_cli({"diagnose", dir.path().string()}, &text) == cli::kExitOk);
  CHECK(text.find("NoTail PASS") != std::string::npos);

  write_bundle(dir, 0.9, 1.002);
  CHECK(run_cli({"diagnose", dir.path().string()}, &text) == cli::kExitSampler);
  CHECK(text.find("FAIL") != std::string::npos);

  TempDir empty;
  CHECK(run_cli({"diagnose", empty.path().string()}, &text) == cli::kExitData);
  CHECK(text.find("MissingBundle") != std::string::npos);
  CHECK_THROWS_AS(cli::diagnose(empty.path().string(), std::cout), Error);
}
