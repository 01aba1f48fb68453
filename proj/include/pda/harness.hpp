#pragma once
#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "pda/deviation.hpp"
#include "pda/env.hpp"
#include "pda/strategies.hpp"

namespace pda {

/// Runs `count` independent jobs on at most `threads` workers. Jobs write
/// their own result slots, so the outcome does not depend on scheduling.
inline void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& job) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, count);
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          job(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

enum class ExperimentMode : std::uint8_t { AllPlayer, Pairwise, EquilibriumCheck };

inline const char* to_string(ExperimentMode m) {
  switch (m) {
    case ExperimentMode::AllPlayer: return "all_player";
    case ExperimentMode::Pairwise: return "pairwise";
    case ExperimentMode::EquilibriumCheck: return "equilibrium_check";
  }
  return "?";
}

inline ExperimentMode parse_mode(std::string_view s) {
  if (s == "all_player") return ExperimentMode::AllPlayer;
  if (s == "pairwise") return ExperimentMode::Pairwise;
  if (s == "equilibrium_check") return ExperimentMode::EquilibriumCheck;
  throw InvalidInput("unknown mode '" + std::string(s) + "'");
}

struct ExperimentSpec {
  ExperimentMode mode{ExperimentMode::Pairwise};
  std::size_t games{10};
  std::uint64_t base_seed{1};
  std::vector<std::uint64_t> seeds;  // overrides base_seed when non-empty
  std::vector<std::string> strategies{"mpne-bbs", "market-order"};
  EnvConfig env;
  StrategyParams strategy_params;
  std::size_t threads{0};  // 0: hardware concurrency
  bool keep_logs{false};

  void validate() const {
    if (games < 1) throw InvalidInput("games must be at least 1");
    if (!seeds.empty() && seeds.size() != games) throw InvalidInput("seed list length must equal games");
    if (mode == ExperimentMode::Pairwise && strategies.size() != 2)
      throw InvalidInput("pairwise mode needs exactly two strategies");
    if (mode != ExperimentMode::EquilibriumCheck && strategies.empty()) throw InvalidInput("no strategies given");
    const auto& known = strategy_names();
    for (const std::string& s : strategies)
      if (std::find(known.begin(), known.end(), s) == known.end()) throw InvalidInput("unknown strategy '" + s + "'");
    env.validate();
  }

  std::uint64_t game_seed(std::size_t game) const { return seeds.empty() ? base_seed + game : seeds[game]; }
};

/// Config file: {"mode", "games", "seed" | "seeds", "strategies", "threads",
/// "env": {EnvConfig keys}, "strategy_params": {"mpne-bbs": {..}, "zi": {..}, "zip": {..}}}
inline ExperimentSpec experiment_from_json(const nlohmann::json& j) {
  ExperimentSpec s;
  try {
    if (j.contains("mode")) s.mode = parse_mode(j["mode"].get<std::string>());
    s.games = j.value("games", s.games);
    s.base_seed = j.value("seed", s.base_seed);
    if (j.contains("seeds")) s.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    if (j.contains("strategies")) s.strategies = j["strategies"].get<std::vector<std::string>>();
    s.threads = j.value("threads", s.threads);
    if (j.contains("env")) s.env = env_config_from_json(j["env"]);
    s.strategy_params = StrategyParams::from_json(j.value("strategy_params", nlohmann::json::object()), s.env.p_max);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("experiment config: ") + e.what());
  }
  return s;
}

struct GameResult {
  std::uint64_t seed{0};
  std::vector<double> unit_costs;  // per broker
  std::vector<double> payments;
  std::vector<double> balancing;
  std::vector<double> requirement;
  std::vector<RoundLog> logs;
  std::size_t warnings{0};
};

// Per-game strategy seeds depend on the strategy name, not the broker slot,
// so identical strategies in one game bid identically.
inline std::uint64_t strategy_seed(std::uint64_t game_seed, const std::string& name) {
  std::seed_seq seq(name.begin(), name.end());
  std::array<std::uint32_t, 2> salt{};
  seq.generate(salt.begin(), salt.end());
  std::mt19937_64 mix(game_seed ^ ((std::uint64_t{salt[0]} << 32) | salt[1]));
  return mix();
}

inline GameResult play_game(const ExperimentSpec& spec, std::uint64_t seed) {
  EnvConfig cfg = spec.env;
  cfg.seed = seed;
  Environment env(cfg, spec.strategies.size());
  std::vector<std::unique_ptr<Strategy>> owned;
  std::vector<Strategy*> strategies;
  for (const std::string& name : spec.strategies) {
    owned.push_back(make_strategy(name, spec.strategy_params, strategy_seed(seed, name)));
    strategies.push_back(owned.back().get());
  }
  const Resolution res(cfg.resolution);
  GameResult g;
  g.seed = seed;
  const std::size_t n = strategies.size();
  g.payments.assign(n, 0.0);
  g.balancing.assign(n, 0.0);
  g.requirement.assign(n, 0.0);
  for (std::size_t s = 0; s < cfg.slots; ++s) {
    SlotResult r = env.advance_slot(strategies);
    for (std::size_t b = 0; b < n; ++b) {
      g.payments[b] += r.brokers[b].payment;
      g.balancing[b] += r.brokers[b].balancing;
      g.requirement[b] += res.to_quantity(r.brokers[b].demand);
    }
    g.warnings += r.warnings.size();
    if (spec.keep_logs) std::move(r.rounds.begin(), r.rounds.end(), std::back_inserter(g.logs));
  }
  for (std::size_t b = 0; b < n; ++b)
    g.unit_costs.push_back(g.requirement[b] > 0 ? (g.payments[b] + g.balancing[b]) / g.requirement[b] : 0.0);
  return g;
}

struct CostRow {
  std::string broker;  // strategy name, suffixed #k for repeats
  std::string strategy;
  double mean{0.0};
  double stdev{0.0};
  std::optional<double> relative;  // this broker's mean ÷ MPNE-BBS mean
  std::vector<double> per_game;
};

struct CostTable {
  ExperimentMode mode{ExperimentMode::Pairwise};
  DemandLevel level{DemandLevel::Mid};
  bool miso{false};
  std::vector<CostRow> rows;

  const CostRow* row(std::string_view broker) const {
    for (const CostRow& r : rows)
      if (r.broker == broker) return &r;
    return nullptr;
  }

  void write_csv(std::ostream& out) const {
    out << "# pda.costtable/1\n";
    out << "mode,demand_level,miso,broker,strategy,games,mean_unit_cost,stdev_unit_cost,relative_to_mpne_bbs,game_unit_costs\n";
    for (const CostRow& r : rows) {
      out << to_string(mode) << ',' << to_string(level) << ',' << (miso ? "on" : "off") << ',' << r.broker << ','
          << r.strategy << ',' << r.per_game.size() << ',' << format_number(r.mean) << ',' << format_number(r.stdev) << ','
          << (r.relative ? format_number(*r.relative) : std::string()) << ',';
      for (std::size_t i = 0; i < r.per_game.size(); ++i) out << (i ? ";" : "") << format_number(r.per_game[i]);
      out << '\n';
    }
  }

  std::string csv() const {
    std::ostringstream s;
    write_csv(s);
    return s.str();
  }
};

struct ExperimentResult {
  CostTable table;
  std::vector<GameResult> games;
  std::size_t warnings{0};

  void write_logs(std::ostream& out, const Resolution& res) const {
    for (std::size_t g = 0; g < games.size(); ++g)
      for (const RoundLog& r : games[g].logs) out << round_log_json(r, res, g).dump() << '\n';
  }
};

inline ExperimentResult run_experiment(const ExperimentSpec& spec) {
  spec.validate();
  if (spec.mode == ExperimentMode::EquilibriumCheck)
    throw InvalidInput("equilibrium_check runs through run_equilibrium_suite");
  ExperimentResult result;
  result.games.resize(spec.games);
  parallel_for(spec.games, spec.threads, [&](std::size_t i) { result.games[i] = play_game(spec, spec.game_seed(i)); });

  CostTable& t = result.table;
  t.mode = spec.mode;
  t.level = spec.env.level;
  t.miso = spec.env.miso.enabled;
  std::map<std::string, int> seen;
  for (std::size_t b = 0; b < spec.strategies.size(); ++b) {
    const std::string& name = spec.strategies[b];
    CostRow r;
    r.strategy = name;
    const int k = ++seen[name];
    r.broker = k == 1 ? name : name + "#" + std::to_string(k);
    for (const GameResult& g : result.games) r.per_game.push_back(g.unit_costs[b]);
    double sum = 0.0;
    for (double c : r.per_game) sum += c;
    r.mean = sum / static_cast<double>(r.per_game.size());
    double ss = 0.0;
    for (double c : r.per_game) ss += (c - r.mean) * (c - r.mean);
    r.stdev = r.per_game.size() > 1 ? std::sqrt(ss / static_cast<double>(r.per_game.size() - 1)) : 0.0;
    t.rows.push_back(std::move(r));
  }
  if (const CostRow* ref = t.row("mpne-bbs"); ref && ref->mean > 0)
    for (CostRow& r : t.rows)
      if (r.broker != "mpne-bbs") r.relative = r.mean / ref->mean;
  for (const GameResult& g : result.games) result.warnings += g.warnings;
  return result;
}

struct EquilibriumSuiteSpec {
  std::size_t adequate{100};
  std::size_t inadequate{100};
  std::size_t premise_violated{0};
  InstanceSpec instance;
  GridConfig grid;
  std::uint64_t seed{1};
  std::size_t threads{0};
};

struct SuiteResult {
  DeviationReport adequate;
  DeviationReport inadequate;
  DeviationReport premise_violated;  // reported, never counted toward pass/fail
  std::size_t premise_instances{0};
  // Instance seeds and worst checks of violating instances, for replay files.
  std::vector<std::pair<Instance, DeviationCheck>> counterexamples;

  bool passed() const { return adequate.nash_holds() && inadequate.nash_holds(); }
};

inline SuiteResult run_equilibrium_suite(const EquilibriumSuiteSpec& spec) {
  struct Job {
    int batch;  // 0 adequate, 1 inadequate, 2 premise violated
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (std::size_t i = 0; i < spec.adequate; ++i) jobs.push_back({0, spec.seed + i});
  for (std::size_t i = 0; i < spec.inadequate; ++i) jobs.push_back({1, spec.seed + 1'000'000 + i});
  for (std::size_t i = 0; i < spec.premise_violated; ++i) jobs.push_back({2, spec.seed + 2'000'000 + i});
  std::vector<DeviationReport> reports(jobs.size());
  std::vector<Instance> instances(jobs.size());
  parallel_for(jobs.size(), spec.threads, [&](std::size_t i) {
    InstanceSpec is = spec.instance;
    is.adequate = jobs[i].batch != 1;
    Instance inst = generate_instance(jobs[i].seed, is);
    if (jobs[i].batch == 2) {
      // Υ just above p_max: finite penalty that does not deter waiting.
      inst.params.balancing_price = inst.params.p_max * 1.5;
      inst.params.premise_override = true;
    }
    reports[i] = verify_mpne(inst.state, inst.config(), spec.grid);
    reports[i].details.clear();
    instances[i] = std::move(inst);
  });
  SuiteResult out;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    DeviationReport& target =
        jobs[i].batch == 0 ? out.adequate : (jobs[i].batch == 1 ? out.inadequate : out.premise_violated);
    target.merge(reports[i]);
    if (jobs[i].batch == 2) ++out.premise_instances;
    if (jobs[i].batch != 2 && !reports[i].nash_holds() && reports[i].worst)
      out.counterexamples.emplace_back(instances[i], *reports[i].worst);
  }
  out.premise_violated.premise_violated = out.premise_instances > 0;
  return out;
}

inline nlohmann::json report_json(const DeviationReport& r) {
  nlohmann::json j{{"premise_violated", r.premise_violated}, {"checks", r.checks},
                   {"violations", r.violations},             {"slack", r.slack},
                   {"max_margin", r.max_margin},             {"max_beyond_phi_margin", r.max_beyond_phi_margin},
                   {"grid_density", r.grid_density},         {"max_actions_per_state", r.max_actions_per_state}};
  return j;
}

}  // namespace pda
