#include <gtest/gtest.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <sys/wait.h>

#include "acpolicy/sim.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

#include <httplib.h>

using namespace acpolicy;
using namespace testing_support;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = ACPOLICY_FIXTURES;

struct Outcome {
  int code;
  std::string output;  // stdout and stderr
};

Outcome run(const std::string& args) {
  const std::string cmd = std::string(ACPOLICY_CLI) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  std::string out;
  char buf[4096];
  while (std::size_t n = fread(buf, 1, sizeof buf, pipe)) out.append(buf, n);
  const int status = pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

fs::path scratch(const std::string& name) {
  const auto d = fs::temp_directory_path() / "acpolicy_cli_test" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json load(const fs::path& p) { return json::parse(slurp(p)); }

std::string scenario(const std::string& name) {
  return (kFixtures / "scenarios" / (name + ".json")).string();
}

}  // namespace

TEST(Cli, SimulateWritesResultsAndManifest) {
  const auto out = scratch("simulate");
  const auto r = run("simulate --config " + scenario("skewed_warm") + " --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.output;
  for (const char* f : {"result.json", "rounds.csv", "occupants.csv", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
  const auto manifest = load(out / "manifest.json");
  EXPECT_EQ(manifest.at("seed"), 42);
  EXPECT_FALSE(manifest.at("seed_override").get<bool>());
  EXPECT_EQ(manifest.at("config_hash").get<std::string>().size(), 64u);
  EXPECT_TRUE(manifest.at("versions").contains("acpolicy"));
  EXPECT_EQ(manifest.at("outputs").size(), 3u);
  const auto result = load(out / "result.json");
  EXPECT_EQ(result.at("provenance").at("config_hash"), manifest.at("config_hash"));
}

TEST(Cli, IdenticalInputsGiveIdenticalFiles) {
  const auto a = scratch("repro_a"), b = scratch("repro_b");
  ASSERT_EQ(run("simulate --config " + scenario("skewed_warm") + " --out " + a.string()).code, 0);
  ASSERT_EQ(run("simulate --config " + scenario("skewed_warm") + " --out " + b.string()).code, 0);
  for (const char* f : {"result.json", "rounds.csv", "occupants.csv"}) {
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
}

TEST(Cli, SeedOverrideChangesResultAndIsRecorded) {
  const auto a = scratch("seed_a"), b = scratch("seed_b");
  ASSERT_EQ(run("simulate --config " + scenario("skewed_warm") + " --out " + a.string()).code, 0);
  ASSERT_EQ(run("simulate --config " + scenario("skewed_warm") + " --seed 99 --out " + b.string()).code, 0);
  EXPECT_NE(slurp(a / "result.json"), slurp(b / "result.json"));
  const auto manifest = load(b / "manifest.json");
  EXPECT_EQ(manifest.at("seed"), 99);
  EXPECT_TRUE(manifest.at("seed_override").get<bool>());
}

TEST(Cli, MissingConfigNamesThePath) {
  const auto r = run("simulate --config /no/such/scenario.json --out " + scratch("missing").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("/no/such/scenario.json"), std::string::npos);
}

TEST(Cli, FormatSelectsOutputs) {
  const auto out = scratch("format");
  ASSERT_EQ(run("simulate --format csv --config " + scenario("symmetric") + " --out " + out.string()).code, 0);
  EXPECT_FALSE(fs::exists(out / "result.json"));
  EXPECT_TRUE(fs::exists(out / "rounds.csv"));
  EXPECT_EQ(run("simulate --format xml --config " + scenario("symmetric")).code, 1);
}

TEST(Cli, FairnessOnSymmetricPriorsKeepsStandardParameters) {
  const auto out = scratch("fair_sym");
  ASSERT_EQ(run("fairness --config " + scenario("symmetric") + " --out " + out.string()).code, 0);
  const auto doc = load(out / "fairness.json");
  const auto& p = doc.at("solution");
  for (const auto& a : p.at("alpha")) EXPECT_NEAR(a.get<double>(), 1.0 / 3, 1e-9);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      EXPECT_NEAR(p.at("beta")[i][j].get<double>(), i == j ? 0.0 : 0.5, 1e-9);
}

TEST(Cli, FairnessOnAsymmetricPairMatchesGridOracleFile) {
  const auto out = scratch("fair_pair");
  ASSERT_EQ(run("fairness --config " + scenario("asymmetric_pair") + " --out " + out.string()).code, 0);
  const auto doc = load(out / "fairness.json");
  const auto oracle = load(kFixtures / "oracles" / "asymmetric_pair_grid.json");
  const auto& sol = doc.at("solution");
  EXPECT_NEAR(sol.at("sum_variance").get<double>(), oracle.at("sum_variance").get<double>(), 1e-4);
  EXPECT_NEAR(sol.at("alpha")[0].get<double>(), oracle.at("alpha_1").get<double>(), 1e-3);
  for (const auto& b : sol.at("exante_benefits")) {
    EXPECT_NEAR(b.get<double>(), oracle.at("common_benefit").get<double>(), 1e-4);
  }
}

TEST(Cli, InfeasibleFixtureHasItsOwnExitCode) {
  const auto out = scratch("fair_inf");
  const auto r = run("fairness --config " + scenario("infeasible_pair") + " --out " + out.string());
  EXPECT_EQ(r.code, 3) << r.output;
  EXPECT_EQ(load(out / "fairness.json").at("solver_status"), "Infeasible");
}

TEST(Cli, AuditPassesOnShippedFixtures) {
  for (const char* f : {"symmetric", "asymmetric_pair", "asymmetric_trio", "infeasible_pair",
                        "price_sweep", "skewed_warm"}) {
    const auto out = scratch(std::string("audit_") + f);
    const auto r = run("audit --config " + scenario(f) + " --out " + out.string());
    EXPECT_EQ(r.code, 0) << f << ": " << r.output;
    EXPECT_TRUE(load(out / "audit.json").at("passed").get<bool>()) << f;
  }
}

TEST(Cli, CorruptedBetaFailsTheAudit) {
  const auto out = scratch("audit_neg");
  const auto r = run("audit --config " + scenario("negative_control") + " --out " + out.string());
  EXPECT_EQ(r.code, 2) << r.output;
  const auto doc = load(out / "audit.json");
  EXPECT_FALSE(doc.at("budget").at("passed").get<bool>());
  EXPECT_TRUE(doc.at("ic").at("passed").get<bool>());
}

TEST(Cli, PairAuditReportMatchesEnumeration) {
  const auto out = scratch("audit_pair");
  ASSERT_EQ(run("audit --config " + scenario("asymmetric_pair") + " --out " + out.string()).code, 0);
  const auto doc = load(out / "audit.json");
  std::vector<double> alpha = doc.at("params").at("alpha").get<std::vector<double>>();
  auto beta = doc.at("params").at("beta").get<std::vector<std::vector<double>>>();
  const auto spec = sim::ScenarioSpec::load(scenario("asymmetric_pair"));
  const auto priors = as_oracle(sim::probe_priors(spec));
  const auto v = oracle::standard_values();
  const oracle::Increments dc = {0.10, 0.05, 0.0};
  for (std::size_t i = 0; i < 2; ++i) {
    for (int theta = 0; theta < 9; ++theta) {
      for (int r = 0; r < 9; ++r) {
        double expected = 0.0;
        for (int other = 0; other < 9; ++other) {
          std::vector<int> ts(2);
          ts[i] = r;
          ts[1 - i] = other;
          const int x = oracle::best_outcome(ts, v, dc);
          expected += priors[1 - i][other] * (v[theta][x] - oracle::payments(ts, priors, alpha, beta, v, dc)[i]);
        }
        EXPECT_NEAR(doc.at("ic").at("interim")[i][theta][r].get<double>(), expected, 1e-12);
      }
    }
  }
}

TEST(Cli, SweepAndExportPriceCurve) {
  const auto out = scratch("sweep");
  ASSERT_EQ(run("sweep --config " + scenario("price_sweep") + " --out " + out.string()).code, 0);
  const auto ex = scratch("export_curve");
  ASSERT_EQ(run("export --figure price-curve --out " + ex.string() + " " + (out / "sweep.json").string()).code, 0);
  const auto csv = slurp(ex / "price_curve.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "price,common_benefit");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 11);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), ','), 11);
}

TEST(Cli, ExportOfNothingIsJustTheHeader) {
  const auto ex = scratch("export_empty");
  ASSERT_EQ(run("export --figure policy-cost --out " + ex.string()).code, 0);
  EXPECT_EQ(slurp(ex / "policy_cost.csv"), "seed,policy,cost\n");
}

TEST(Cli, ExportOfMalformedResultNamesThePath) {
  const auto ex = scratch("export_bad");
  const auto bad = ex / "broken.json";
  std::ofstream(bad) << "{\"points\": [ {\"price\": ";
  const auto r = run("export --figure price-curve --out " + ex.string() + " " + bad.string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find(bad.string()), std::string::npos);
}

TEST(Cli, CompareAndPolicyCostExport) {
  const auto out = scratch("compare");
  ASSERT_EQ(run("compare --config " + scenario("skewed_warm") + " --seeds 42,43 --out " + out.string()).code, 0);
  const auto doc = load(out / "compare.json");
  ASSERT_EQ(doc.at("groups").size(), 2u);
  const auto ex = scratch("export_cost");
  ASSERT_EQ(run("export --figure policy-cost --out " + ex.string() + " " + (out / "compare.json").string()).code, 0);
  const auto csv = slurp(ex / "policy_cost.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}

TEST(Cli, ServeRejectsABadPort) {
  const auto r = run("serve --port 70000");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("port"), std::string::npos);
}

TEST(Cli, ServeAnswersHealthAndFlushesOnShutdown) {
  const auto dir = scratch("serve");
  const int port = 18000 + static_cast<int>(::getpid() % 1000);
  const auto pidfile = dir / "pid";
  const std::string cmd = std::string(ACPOLICY_CLI) + " serve --tick-ms 0 --port " + std::to_string(port) +
                          " --data-dir " + (dir / "data").string() + " > " + (dir / "log").string() +
                          " 2>&1 & echo $! > " + pidfile.string();
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  httplib::Client client("127.0.0.1", port);
  httplib::Result health;
  for (int k = 0; k < 100 && !health; ++k) {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    health = client.Get("/health");
  }
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  const auto created = client.Post("/sessions", R"({"config":{"occupancy":["a","b"],"phase":"FairAllocation","initial_temp":24,"base_setpoint":25,"weather":31.0}})",
                                   "application/json");
  ASSERT_TRUE(created);
  ASSERT_EQ(created->status, 201);
  const auto id = json::parse(created->body).at("session_id").get<std::string>();

  const std::string pid = slurp(pidfile);
  ASSERT_EQ(std::system(("kill -TERM " + pid).c_str()), 0);
  for (int k = 0; k < 100 && client.Get("/health"); ++k) {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  EXPECT_FALSE(client.Get("/health"));

  const auto log = dir / "data" / (id + ".jsonl");
  ASSERT_TRUE(fs::exists(log));
  const auto replay = run("replay " + log.string() + " --out " + (dir / "replay").string());
  EXPECT_EQ(replay.code, 0) << replay.output;
  EXPECT_NE(replay.output.find("2 events replayed"), std::string::npos) << replay.output;
}

TEST(Cli, ReplayReportsTheBrokenSequence) {
  const auto dir = scratch("replay_bad");
  std::ofstream(dir / "bad.jsonl") << "{\"seq\":1,\"kind\":\"SessionCreated\",\"at\":0,\"payload\":{}}\n";
  const auto r = run("replay " + (dir / "bad.jsonl").string() + " --out " + dir.string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("seq"), std::string::npos) << r.output;
}
