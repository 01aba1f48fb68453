// pda_cli: clear | verify | tournament | replay
// Exit codes: 0 success, 1 invariant violation, 2 bad input.
#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "pda/harness.hpp"
#include "pda/kkt.hpp"

namespace {

using nlohmann::json;
using namespace pda;

constexpr int kOk = 0;
constexpr int kViolation = 1;
constexpr int kBadInput = 2;

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InvalidInput("'" + path + "': " + e.what());
  }
}

// Writes to `path`, or stdout when empty.
void emit(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out || !(out << text)) throw InvalidInput("cannot write '" + path + "'");
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> games;
  std::optional<std::string> demand_level;
  std::optional<std::string> miso;
  std::string out;
};

int run_clear(const std::string& book_path, const Common& c) {
  const json cfg = c.config.empty() ? json::object() : load_json(c.config);
  PricingRule rule = acpr();
  Resolution res(0.001);
  BookLimits limits;
  bool guard = true;
  try {
    if (cfg.contains("pricing_rule")) rule = rule_from_json(cfg["pricing_rule"]);
    res = Resolution(cfg.value("resolution", 0.001));
    limits.p_max = cfg.value("p_max", limits.p_max);
    limits.sell_bid_max = cfg.value("sell_bid_max", limits.p_max);
    guard = cfg.value("self_match_guard", true);
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("clear config: ") + e.what());
  }
  validate_rule(rule);
  std::ifstream in(book_path);
  if (!in) throw InvalidInput("cannot open '" + book_path + "'");
  const std::vector<Order> orders = read_orders(in, res);
  const CombinedBook book = normalize_book(orders, limits);
  const ClearingOutcome out = clear(book, rule, guard);

  json j{{"degenerate", out.degenerate}, {"total_cleared", res.to_quantity(out.total_cleared)}, {"fills", json::array()}};
  if (!out.degenerate) {
    j["clearing_price"] = out.clearing_price;
    j["last_cleared_ask"] = out.last_cleared_ask_price();
    j["last_cleared_bid"] = out.last_cleared_bid_price();
  }
  for (const Fill& f : out.fills)
    j["fills"].push_back({{"side", to_string(f.order.side)},
                          {"price", f.order.price},
                          {"quantity", res.to_quantity(f.order.quantity)},
                          {"owner", f.order.owner},
                          {"cleared", res.to_quantity(f.cleared)},
                          {"excluded", f.excluded}});
  int code = kOk;
  if (!out.degenerate) {
    const KktCertificate cert = certify_kkt(book, out);
    j["kkt"] = {{"lambda", cert.lambda},
                {"valid", cert.valid()},
                {"stationarity", cert.residuals.stationarity},
                {"primal_feasibility", cert.residuals.primal_feasibility},
                {"balance", cert.residuals.balance},
                {"complementary_slackness", cert.residuals.complementary_slackness}};
    if (!cert.valid()) code = kViolation;
  }
  emit(c.out, j.dump(2) + "\n");
  return code;
}

EquilibriumSuiteSpec suite_from_json(const json& j) {
  EquilibriumSuiteSpec s;
  try {
    s.adequate = j.value("adequate", s.adequate);
    s.inadequate = j.value("inadequate", s.inadequate);
    s.premise_violated = j.value("premise_violated", s.premise_violated);
    s.seed = j.value("seed", s.seed);
    s.threads = j.value("threads", s.threads);
    s.instance.players = j.value("players", s.instance.players);
    s.instance.horizon = j.value("horizon", s.instance.horizon);
    s.instance.prosumers = j.value("prosumers", s.instance.prosumers);
    s.instance.max_asks = j.value("max_asks", s.instance.max_asks);
    if (j.contains("pricing_rule")) s.instance.rule = rule_from_json(j["pricing_rule"]);
    s.grid.density = j.value("density", s.grid.density);
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("suite config: ") + e.what());
  }
  if (s.instance.players > SizeCap{}.max_players || s.instance.horizon > SizeCap{}.max_horizon ||
      s.instance.max_asks > SizeCap{}.max_asks)
    throw InvalidInput("suite instances exceed the enumeration size cap (3 players, horizon 3, 8 asks)");
  return s;
}

int run_verify(const Common& c) {
  EquilibriumSuiteSpec spec = suite_from_json(c.config.empty() ? json::object() : load_json(c.config));
  if (c.seed) spec.seed = *c.seed;
  if (c.games) spec.adequate = spec.inadequate = *c.games;
  const SuiteResult r = run_equilibrium_suite(spec);
  json j{{"adequate", report_json(r.adequate)},
         {"inadequate", report_json(r.inadequate)},
         {"premise_violated", report_json(r.premise_violated)},
         {"premise_instances", r.premise_instances},
         {"passed", r.passed()},
         {"counterexamples", json::array()}};
  for (const auto& [inst, check] : r.counterexamples)
    j["counterexamples"].push_back(replay_json(inst, check, default_slack(inst.state, inst.config())));
  emit(c.out, j.dump(2) + "\n");
  std::cerr << "adequate: " << r.adequate.violations << "/" << r.adequate.checks << " violations, inadequate: "
            << r.inadequate.violations << "/" << r.inadequate.checks << " violations\n";
  return r.passed() ? kOk : kViolation;
}

int run_tournament(const Common& c, const std::string& log_path) {
  ExperimentSpec spec = experiment_from_json(c.config.empty() ? json::object() : load_json(c.config));
  if (c.seed) {
    spec.base_seed = *c.seed;
    spec.seeds.clear();
  }
  if (c.games) {
    spec.games = *c.games;
    if (!spec.seeds.empty() && spec.seeds.size() != spec.games) spec.seeds.clear();
  }
  if (c.demand_level) spec.env.level = parse_demand_level(*c.demand_level);
  if (c.miso) {
    if (*c.miso != "on" && *c.miso != "off") throw InvalidInput("--miso takes on or off");
    spec.env.miso.enabled = *c.miso == "on";
  }
  spec.keep_logs = !log_path.empty();
  const ExperimentResult r = run_experiment(spec);
  emit(c.out, r.table.csv());
  if (!log_path.empty()) {
    std::ostringstream logs;
    r.write_logs(logs, Resolution(spec.env.resolution));
    emit(log_path, logs.str());
  }
  // Nobody may pay more per unit than full balancing.
  for (const CostRow& row : r.table.rows)
    for (double cost : row.per_game)
      if (cost > spec.env.balancing_price + 1e-9) {
        std::cerr << row.broker << ": unit cost " << cost << " above balancing price\n";
        return kViolation;
      }
  if (r.warnings) std::cerr << r.warnings << " orders clipped\n";
  return kOk;
}

int run_replay(const std::string& path, const Common& c) {
  const ReplayResult r = replay(load_json(path));
  json j{{"mpne_value", r.mpne_value},
         {"deviation_value", r.deviation_value},
         {"margin", r.mpne_value - r.deviation_value},
         {"slack", r.slack},
         {"violation", r.violation}};
  emit(c.out, j.dump(2) + "\n");
  return r.violation ? kViolation : kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Periodic double auction toolkit"};
  app.require_subcommand(1);
  Common common;
  std::string book_path, replay_path, log_path;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "JSON configuration file");
    sub->add_option("--out", common.out, "output file (default stdout)");
  };
  CLI::App* clear_cmd = app.add_subcommand("clear", "clear one order book file");
  clear_cmd->add_option("book", book_path, "lines of 'side price quantity owner'")->required();
  add_common(clear_cmd);

  CLI::App* verify_cmd = app.add_subcommand("verify", "equilibrium deviation suite");
  add_common(verify_cmd);
  verify_cmd->add_option("--seed", common.seed, "base instance seed");
  verify_cmd->add_option("--games", common.games, "instances per batch (adequate and inadequate)")->check(CLI::PositiveNumber);

  CLI::App* tour_cmd = app.add_subcommand("tournament", "run an experiment in the lite environment");
  add_common(tour_cmd);
  tour_cmd->add_option("--seed", common.seed, "base game seed");
  tour_cmd->add_option("--games", common.games, "number of games")->check(CLI::PositiveNumber);
  tour_cmd->add_option("--demand-level", common.demand_level, "low, mid, high or extreme");
  tour_cmd->add_option("--miso", common.miso, "on or off");
  tour_cmd->add_option("--log", log_path, "JSON-lines round log");

  CLI::App* replay_cmd = app.add_subcommand("replay", "re-evaluate a recorded deviation");
  replay_cmd->add_option("file", replay_path, "pda.replay/1 document")->required();
  add_common(replay_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kBadInput;
  }

  try {
    if (*clear_cmd) return run_clear(book_path, common);
    if (*verify_cmd) return run_verify(common);
    if (*tour_cmd) return run_tournament(common, log_path);
    if (*replay_cmd) return run_replay(replay_path, common);
  } catch (const InvalidInput& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kBadInput;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kViolation;
  }
  return kBadInput;
}
