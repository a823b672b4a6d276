// acpolicy: operator entry point.
//
//   acpolicy simulate --config scenario.json --out dir [--seed N] [--format json|csv]
//   acpolicy compare  --config scenario.json --out dir [--seeds 42,43]
//   acpolicy sweep    --config scenario.json --out dir [--prices 0.1,0.2]
//   acpolicy fairness --config scenario.json --out dir
//   acpolicy audit    --config scenario.json --out dir [--samples N]
//   acpolicy serve    --port 8080 --data-dir dir [--tick-ms 1000]
//   acpolicy replay   session.jsonl --out dir
//   acpolicy export   --figure price-curve|comfort-cost|policy-cost --out dir files...
//
// Exit codes: 0 ok, 1 config or input error, 2 audit failure, 3 solver
// infeasible.

#include "acpolicy/api.hpp"
#include "acpolicy/errors.hpp"
#include "acpolicy/money.hpp"
#include "acpolicy/serialization.hpp"
#include "acpolicy/sim.hpp"

#include <csignal>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include <pthread.h>

#include <CLI11.hpp>
#include <httplib.h>
#include <openssl/opensslv.h>

using namespace acpolicy;
using namespace acpolicy::sim;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitAudit = 2;
constexpr int kExitInfeasible = 3;

struct Common {
  std::string config;
  std::string out = "acpolicy-out";
  std::optional<std::uint64_t> seed;
  std::string format = "both";
  bool verbose = false;
};

class Run {
 public:
  Run(std::string command, const Common& common) : command_(std::move(command)), common_(common) {
    fs::create_directories(common_.out);
  }

  void write(const std::string& name, const std::string& content) {
    const fs::path path = fs::path(common_.out) / name;
    std::ofstream out(path, std::ios::binary);
    out << content;
    if (!out) throw Error("cannot write " + path.string());
    outputs_.push_back({{"file", name}, {"sha256", sha256_hex(content)}});
    if (common_.verbose) std::cerr << "wrote " << path.string() << '\n';
  }

  void write_json(const std::string& name, const json& doc) { write(name, doc.dump(2) + "\n"); }

  bool want_json() const { return common_.format != "csv"; }
  bool want_csv() const { return common_.format != "json"; }

  void manifest(const json& config_doc, std::optional<std::uint64_t> seed, json extra = {}) {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    json doc = {{"command", command_},
                {"config", common_.config},
                {"config_hash", config_doc.is_null() ? json(nullptr) : json(sha256_hex(config_doc.dump()))},
                {"seed", seed ? json(*seed) : json(nullptr)},
                {"seed_override", common_.seed.has_value()},
                {"created_at", stamp},
                {"versions",
                 {{"acpolicy", "0.3.0"},
                  {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                        std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                        std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
                  {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                std::to_string(EIGEN_MINOR_VERSION)},
                  {"openssl", OPENSSL_VERSION_TEXT},
                  {"cpp_httplib", CPPHTTPLIB_VERSION},
                  {"cli11", CLI11_VERSION},
                  {"compiler", __VERSION__}}},
                {"outputs", outputs_}};
    if (!extra.is_null()) doc["details"] = std::move(extra);
    const fs::path path = fs::path(common_.out) / "manifest.json";
    std::ofstream out(path);
    out << doc.dump(2) << "\n";
    if (!out) throw Error("cannot write " + path.string());
  }

 private:
  std::string command_;
  const Common& common_;
  json outputs_ = json::array();
};

ScenarioSpec load_spec(const Common& c) {
  if (c.config.empty()) throw ConfigError("--config is required", "config");
  if (!fs::exists(c.config)) throw ConfigError("no such file: " + c.config, "config");
  ScenarioSpec spec = ScenarioSpec::load(c.config);
  if (c.seed) spec = spec.with_seed(*c.seed);
  return spec;
}

std::vector<double> parse_list(const std::string& text, const char* what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError(std::string("bad number in --") + what + ": '" + item + "'", what);
    }
  }
  return out;
}

// ---------------------------------------------------------------- commands

int cmd_simulate(const Common& c) {
  const auto spec = load_spec(c);
  const auto result = run_scenario(spec);
  Run run("simulate", c);
  if (run.want_json()) run.write_json("result.json", result.to_json());
  if (run.want_csv()) {
    run.write("rounds.csv", result.rounds_csv());
    run.write("occupants.csv", result.occupants_csv());
  }
  run.manifest(spec.to_json(), spec.seed);
  std::cout << spec.name << ": " << result.rounds.size() << " rounds, total cost $"
            << money::rounded(result.total_cost, 2) << ", mean comfort $"
            << money::rounded(result.mean_comfort, 2) << '\n';
  return kExitOk;
}

int cmd_compare(const Common& c, const std::string& seeds_text) {
  const auto spec = load_spec(c);
  std::vector<std::uint64_t> seeds;
  if (!seeds_text.empty()) {
    for (double s : parse_list(seeds_text, "seeds")) seeds.push_back(static_cast<std::uint64_t>(s));
  } else if (!c.seed && spec.expect.contains("group_seeds")) {
    seeds = spec.expect.at("group_seeds").get<std::vector<std::uint64_t>>();
  } else {
    seeds = {spec.seed};
  }
  const Policy baseline{PolicyKind::FixedSetpoint, spec.session.base_setpoint};
  json groups = json::array();
  std::ostringstream csv;
  csv << "seed,policy_cost,baseline_cost,saving,policy_comfort,baseline_comfort\n";
  double mean = 0.0;
  for (auto seed : seeds) {
    const auto s = spec.with_seed(seed);
    const auto report = baseline_compare(run_scenario(s), run_scenario(s.with_policy(baseline)));
    mean += report.saving / static_cast<double>(seeds.size());
    groups.push_back({{"seed", seed}, {"report", report.to_json()}});
    csv << seed << ',' << money::exact(report.policy_cost) << ',' << money::exact(report.baseline_cost)
        << ',' << money::exact(report.saving) << ',' << money::exact(report.policy_comfort) << ','
        << money::exact(report.baseline_comfort) << '\n';
  }
  Run run("compare", c);
  if (run.want_json()) {
    run.write_json("compare.json", {{"kind", "compare"},
                                    {"policy", to_string(spec.policy.kind)},
                                    {"baseline", baseline.to_json()},
                                    {"groups", groups},
                                    {"mean_saving", mean}});
  }
  if (run.want_csv()) run.write("compare.csv", csv.str());
  run.manifest(spec.to_json(), spec.seed, {{"seeds", seeds}});
  std::cout << "mean saving over " << seeds.size() << " seeds: " << mean * 100.0 << "%\n";
  return kExitOk;
}

int cmd_sweep(const Common& c, const std::string& prices_text) {
  const auto spec = load_spec(c);
  const auto prices = prices_text.empty() ? spec.prices : parse_list(prices_text, "prices");
  if (prices.empty()) throw ConfigError("no price grid: set \"prices\" or --prices", "prices");
  const auto sweep = price_sweep(spec, prices);
  Run run("sweep", c);
  if (run.want_json()) run.write_json("sweep.json", sweep.to_json());
  if (run.want_csv()) run.write("sweep.csv", sweep.csv());
  run.manifest(spec.to_json(), spec.seed);
  std::cout << "common benefit " << (sweep.non_increasing() ? "non-increasing" : "NOT monotone")
            << " over " << prices.size() << " prices\n";
  return kExitOk;
}

struct Solved {
  MomentCache cache;
  FairnessSolution solution;
};

Solved solve(const ScenarioSpec& spec) {
  const auto costs = probe_costs(spec);
  auto cache = build_moment_cache(probe_priors(spec), costs, spec.session.valuations,
                                  spec.session.moments, {spec.session.psi_samples, spec.seed});
  auto solution = optimize_fairness(cache);
  return {std::move(cache), std::move(solution)};
}

int cmd_fairness(const Common& c) {
  const auto spec = load_spec(c);
  const auto [cache, sol] = solve(spec);
  const auto standard = MechanismParams::standard(spec.session.occupancy.size());
  const auto std_benefits = exante_net_benefits(cache, standard);
  const auto [lo, hi] = std::minmax_element(std_benefits.begin(), std_benefits.end());
  Run run("fairness", c);
  run.write_json("fairness.json",
                 {{"scenario", spec.name},
                  {"occupants", spec.session.occupancy},
                  {"temperature", spec.probe.temperature},
                  {"solver_status", to_string(sol.status)},
                  {"solution", sol.to_json()},
                  {"standard",
                   {{"benefits", std_benefits},
                    {"spread", *hi - *lo},
                    {"sum_variance", expost_variance_sum(cache, standard)}}}});
  run.manifest(spec.to_json(), spec.seed);
  std::cout << "solver_status " << to_string(sol.status) << ", equality residual "
            << sol.equality_residual << ", sum variance " << sol.sum_variance << '\n';
  if (sol.status == SolverStatus::Infeasible) {
    std::cerr << "stage-1 equality unattainable; wrote the minimal-residual point\n";
    return kExitInfeasible;
  }
  return kExitOk;
}

int cmd_audit(const Common& c, std::uint64_t samples, bool force_exhaustive) {
  const auto spec = load_spec(c);
  const std::size_t n = spec.session.occupancy.size();
  const auto costs = probe_costs(spec);
  const auto priors = probe_priors(spec);
  std::string params_source = "audit_params";
  std::optional<MechanismParams> params = spec.audit_params;
  if (!params) {
    if (n >= 2) {
      params = solve(spec).solution.params;
      params_source = "optimized";
    } else {
      params = MechanismParams::standard(1);
      params_source = "standard";
    }
  }
  const bool exhaustive = force_exhaustive || n <= 3;
  const AuditDepth depth = exhaustive ? AuditDepth::full() : AuditDepth::sampled(samples, spec.seed);
  const auto ic = ic_audit(priors, *params, costs, spec.session.valuations, depth);
  const auto budget = budget_audit(priors, *params, costs, spec.session.valuations, depth);
  const bool passed = ic.passed() && budget.passed();
  Run run("audit", c);
  json ic_doc = ic.to_json();
  if (exhaustive) {
    json interim = json::array();
    for (const auto& table : ic.interim) interim.push_back(table);
    ic_doc["interim"] = interim;
  }
  run.write_json("audit.json", {{"scenario", spec.name},
                                {"temperature", spec.probe.temperature},
                                {"params_source", params_source},
                                {"params", serial::params_to_json(*params)},
                                {"ic", ic_doc},
                                {"budget", budget.to_json()},
                                {"passed", passed}});
  run.manifest(spec.to_json(), spec.seed);
  std::cout << "IC max violation " << ic.max_violation << ", budget max imbalance "
            << budget.max_imbalance << ": " << (passed ? "PASS" : "FAIL") << '\n';
  return passed ? kExitOk : kExitAudit;
}

int cmd_serve(const std::string& host, int port, const std::string& data_dir, std::int64_t tick_ms) {
  if (port < 1 || port > 65535) throw ConfigError("port must be in 1..65535", "port");
  // Block termination signals in every thread; one thread waits for them.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  api::ServerOptions opts;
  opts.data_dir = data_dir;
  opts.tick_ms = tick_ms;
  api::Server server(opts);
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    server.stop();
  });
  std::cerr << "listening on " << host << ':' << port << " (" << server.session_count()
            << " sessions restored)\n";
  const bool ok = server.listen(host, port);
  if (!ok) {
    std::cerr << "error: cannot listen on " << host << ':' << port << '\n';
    pthread_kill(waiter.native_handle(), SIGTERM);
  }
  waiter.join();
  return ok ? kExitOk : kExitConfig;
}

int cmd_replay(const Common& c, const std::string& log_path) {
  if (!fs::exists(log_path)) throw ConfigError("no such file: " + log_path, "log");
  const auto events = read_event_log(log_path);
  ManualClock clock(events.empty() ? 0 : events.back().at_ms);
  const auto session = Session::replay(events, clock);
  Run run("replay", c);
  run.write("state.json", session.state().serialize() + "\n");
  run.manifest(nullptr, std::nullopt, {{"log", log_path}, {"events", events.size()}});
  std::cout << events.size() << " events replayed, " << session.state().rounds().size()
            << " rounds\n";
  return kExitOk;
}

json read_result(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path, 0);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what(), 0);
  }
}

int cmd_export(const Common& c, const std::string& figure, const std::vector<std::string>& inputs) {
  std::ostringstream csv;
  std::string name;
  if (figure == "price-curve") {
    name = "price_curve.csv";
    csv << "price,common_benefit\n";
    for (const auto& path : inputs) {
      const auto doc = read_result(path);
      std::string text;
      try {
        text = PriceSweep::from_json(doc).csv();
      } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.what(), 0);
      }
      csv << text.substr(text.find('\n') + 1);
    }
  } else if (figure == "comfort-cost") {
    name = "comfort_cost.csv";
    csv << "scenario,seed,round,setpoint,sum_valuations,cost\n";
    for (const auto& path : inputs) {
      const auto doc = read_result(path);
      SessionResult r;
      try {
        r = SessionResult::from_json(doc);
      } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.what(), 0);
      }
      for (const auto& rec : r.rounds) {
        csv << r.name << ',' << r.seed << ',' << rec.round << ',' << rec.outcome.setpoint << ','
            << money::exact(rec.welfare.sum_valuations) << ',' << money::exact(rec.cost) << '\n';
      }
    }
  } else if (figure == "policy-cost") {
    name = "policy_cost.csv";
    csv << "seed,policy,cost\n";
    for (const auto& path : inputs) {
      const auto doc = read_result(path);
      try {
        const auto policy = doc.at("policy").get<std::string>();
        for (const auto& g : doc.at("groups")) {
          const auto seed = g.at("seed").get<std::uint64_t>();
          csv << seed << ',' << policy << ',' << g.at("report").at("policy_cost").get<std::string>() << '\n';
          csv << seed << ",FixedSetpoint," << g.at("report").at("baseline_cost").get<std::string>() << '\n';
        }
      } catch (const json::exception& e) {
        throw ParseError(path + ": malformed compare result: " + e.what(), 0);
      }
    }
  } else {
    throw ConfigError("unknown figure '" + figure + "'", "figure");
  }
  Run run("export", c);
  run.write(name, csv.str());
  run.manifest(nullptr, std::nullopt, {{"figure", figure}, {"inputs", inputs}});
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fair AC set-point mechanism: simulate, audit, optimize, serve"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* opt = sub->add_option("--config", common.config, "scenario JSON");
    if (needs_config) opt->required();
    sub->add_option("--out", common.out, "output directory");
    sub->add_option("--seed", common.seed, "override the scenario seed");
    sub->add_option("--format", common.format, "json, csv or both")
        ->check(CLI::IsMember({"json", "csv", "both"}));
    sub->add_flag("--verbose", common.verbose, "log to stderr");
  };

  auto* simulate = app.add_subcommand("simulate", "run a scenario");
  add_common(simulate, true);

  std::string seeds_text;
  auto* compare = app.add_subcommand("compare", "policy vs fixed set-point baseline");
  add_common(compare, true);
  compare->add_option("--seeds", seeds_text, "comma-separated seeds (one group each)");

  std::string prices_text;
  auto* sweep = app.add_subcommand("sweep", "common net benefit vs electricity price");
  add_common(sweep, true);
  sweep->add_option("--prices", prices_text, "comma-separated ascending $/kWh");

  auto* fairness = app.add_subcommand("fairness", "optimize cost shares and redistribution");
  add_common(fairness, true);

  std::uint64_t samples = 20000;
  bool exhaustive = false;
  auto* audit = app.add_subcommand("audit", "incentive and budget audit");
  add_common(audit, true);
  audit->add_option("--samples", samples, "opponent draws for sampled audits");
  audit->add_flag("--exhaustive", exhaustive, "enumerate even beyond three occupants");

  std::string host = "127.0.0.1", data_dir = "sessions";
  int port = 8080;
  std::int64_t tick_ms = 1000;
  auto* serve = app.add_subcommand("serve", "run the HTTP API");
  serve->add_option("--host", host);
  serve->add_option("--port", port);
  serve->add_option("--data-dir", data_dir, "event logs");
  serve->add_option("--tick-ms", tick_ms, "deadline check period, 0 = manual rounds only");
  serve->add_flag("--verbose", common.verbose);

  std::string log_path;
  auto* replay = app.add_subcommand("replay", "rebuild session state from an event log");
  add_common(replay, false);
  replay->add_option("log", log_path, "event log (JSONL)")->required();

  std::string figure;
  std::vector<std::string> inputs;
  auto* exporter = app.add_subcommand("export", "figure-ready CSVs from result files");
  add_common(exporter, false);
  exporter->add_option("--figure", figure, "price-curve, comfort-cost or policy-cost")->required();
  exporter->add_option("inputs", inputs, "result files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*simulate) return cmd_simulate(common);
    if (*compare) return cmd_compare(common, seeds_text);
    if (*sweep) return cmd_sweep(common, prices_text);
    if (*fairness) return cmd_fairness(common);
    if (*audit) return cmd_audit(common, samples, exhaustive);
    if (*serve) return cmd_serve(host, port, data_dir, tick_ms);
    if (*replay) return cmd_replay(common, log_path);
    if (*exporter) return cmd_export(common, figure, inputs);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what();
    if (!e.field().empty()) std::cerr << " [" << e.field() << "]";
    std::cerr << '\n';
    return kExitConfig;
  } catch (const ReplayError& e) {
    std::cerr << "replay error at seq " << e.sequence() << ": " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  return kExitConfig;
}
