#pragma once
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pda/clearing.hpp"

namespace pda {

/// One wholesale ask on the supply curve.
struct SupplyOffer {
  Price price{0.0};
  Qty quantity{0};

  friend bool operator==(const SupplyOffer&, const SupplyOffer&) = default;
};

inline void sort_supply_curve(std::vector<SupplyOffer>& curve) {
  std::sort(curve.begin(), curve.end(), [](const SupplyOffer& a, const SupplyOffer& b) {
    return a.price != b.price ? a.price < b.price : a.quantity > b.quantity;
  });
}

/// Game state at the start of a round. Players are indexed 0..N-1 here and
/// appear as owners 1..N in order books.
struct MarketState {
  std::size_t round{1};
  std::vector<SupplyOffer> supply_curve;
  std::vector<Qty> demand;
  std::vector<Qty> prosumer_supply;

  std::size_t players() const noexcept { return demand.size(); }
  Qty total_demand() const { return std::accumulate(demand.begin(), demand.end(), Qty{0}); }
  Qty wholesale_supply() const {
    Qty total = 0;
    for (const SupplyOffer& s : supply_curve) total += s.quantity;
    return total;
  }
  Qty total_prosumer_supply() const { return std::accumulate(prosumer_supply.begin(), prosumer_supply.end(), Qty{0}); }
  Qty overall_supply() const { return wholesale_supply() + total_prosumer_supply(); }
  bool adequate_supply() const { return wholesale_supply() >= total_demand(); }

  /// Validated round-1 state: Q+ > Q- >= 0 for every player, positive ask
  /// quantities; the curve is sorted.
  static MarketState initial(std::vector<SupplyOffer> curve, std::vector<Qty> demand, std::vector<Qty> prosumer_supply) {
    if (demand.empty()) throw InvalidInput("at least one player is required");
    if (demand.size() != prosumer_supply.size()) throw InvalidInput("demand and prosumer supply sizes differ");
    for (std::size_t b = 0; b < demand.size(); ++b) {
      if (prosumer_supply[b] < 0 || demand[b] <= prosumer_supply[b])
        throw InvalidInput("player " + std::to_string(b + 1) + " must satisfy Q+ > Q- >= 0");
    }
    for (const SupplyOffer& s : curve) {
      if (s.quantity <= 0) throw InvalidInput("ask quantity must be positive");
      if (!(s.price >= 0.0)) throw InvalidInput("ask price must be non-negative");
    }
    sort_supply_curve(curve);
    return MarketState{1, std::move(curve), std::move(demand), std::move(prosumer_supply)};
  }

  friend bool operator==(const MarketState&, const MarketState&) = default;
};

struct GameParams {
  Price p_max{100.0};
  Qty q_max{std::numeric_limits<Qty>::max()};
  Price balancing_price{0.0};
  std::size_t horizon{1};
  PricingRule pricing_rule{acpr()};
  Resolution resolution{0.001};
  Price epsilon{0.01};
  bool self_match_guard{true};
  // Accept Υ <= γ·p_max (finite balancing that is not worst-case deterrent).
  bool premise_override{false};
};

/// Validated game configuration. γ = Q_max/q_min + 1 with Q_max the largest
/// initial demand, and the balancing price must exceed γ·p_max.
class GameConfig {
public:
  static GameConfig make(const GameParams& params, const MarketState& initial) {
    if (params.horizon < 1) throw InvalidInput("horizon must be at least 1");
    if (initial.players() < 1) throw InvalidInput("at least one player is required");
    if (!(params.p_max > 0.0)) throw InvalidInput("p_max must be positive");
    if (!(params.epsilon > 0.0)) throw InvalidInput("epsilon must be positive");
    validate_rule(params.pricing_rule);
    GameConfig cfg;
    cfg.params_ = params;
    cfg.players_ = initial.players();
    const Qty q_max_demand = *std::max_element(initial.demand.begin(), initial.demand.end());
    cfg.gamma_ = static_cast<double>(q_max_demand) + 1.0;
    cfg.premise_holds_ = params.balancing_price > cfg.gamma_ * params.p_max;
    if (!cfg.premise_holds_ && !params.premise_override)
      throw InvalidInput("balancing price " + format_number(params.balancing_price) + " must exceed gamma*p_max = " +
                         format_number(cfg.gamma_ * params.p_max));
    return cfg;
  }

  std::size_t players() const noexcept { return players_; }
  std::size_t horizon() const noexcept { return params_.horizon; }
  Price p_max() const noexcept { return params_.p_max; }
  Qty q_max() const noexcept { return params_.q_max; }
  Price balancing_price() const noexcept { return params_.balancing_price; }
  double gamma() const noexcept { return gamma_; }
  bool premise_holds() const noexcept { return premise_holds_; }
  const PricingRule& pricing_rule() const noexcept { return params_.pricing_rule; }
  const Resolution& resolution() const noexcept { return params_.resolution; }
  Price epsilon() const noexcept { return params_.epsilon; }
  bool self_match_guard() const noexcept { return params_.self_match_guard; }
  const GameParams& params() const noexcept { return params_; }

  BookLimits book_limits() const {
    return BookLimits{params_.p_max, std::max(params_.p_max, params_.balancing_price), params_.q_max};
  }

private:
  GameParams params_;
  std::size_t players_{0};
  double gamma_{1.0};
  bool premise_holds_{false};
};

struct Bid {
  Price price{0.0};
  Qty quantity{0};

  friend bool operator==(const Bid&, const Bid&) = default;
};

struct PlayerAction {
  std::vector<Bid> buys;
  std::vector<Bid> sells;

  Qty buy_quantity() const {
    Qty total = 0;
    for (const Bid& b : buys) total += b.quantity;
    return total;
  }
  Qty sell_quantity() const {
    Qty total = 0;
    for (const Bid& s : sells) total += s.quantity;
    return total;
  }

  friend bool operator==(const PlayerAction&, const PlayerAction&) = default;
};

using JointAction = std::vector<PlayerAction>;

class QuantityCapViolation : public InvalidInput {
public:
  QuantityCapViolation(std::size_t player, const std::string& what)
      : InvalidInput("player " + std::to_string(player + 1) + ": " + what), player_(player) {}
  std::size_t player() const noexcept { return player_; }

private:
  std::size_t player_;
};

struct StepResult {
  ClearingOutcome outcome;
  CombinedBook book;
  std::vector<double> costs;
  MarketState next;
};

inline ParticipantId owner_of(std::size_t player) { return static_cast<ParticipantId>(player + 1); }

inline CombinedBook build_book(const MarketState& state, const JointAction& action, const GameConfig& config) {
  if (action.size() != state.players()) throw InvalidInput("joint action size does not match player count");
  std::vector<Order> orders;
  for (const SupplyOffer& s : state.supply_curve)
    if (s.quantity > 0) orders.push_back(Order{kWholesaleSupplier, Side::Ask, s.price, s.quantity, 0});
  for (std::size_t b = 0; b < action.size(); ++b) {
    const PlayerAction& a = action[b];
    if (a.buy_quantity() > state.demand[b])
      throw QuantityCapViolation(b, "buy quantity exceeds outstanding demand");
    if (a.sell_quantity() > state.prosumer_supply[b])
      throw QuantityCapViolation(b, "sell quantity exceeds available supply");
    for (const Bid& bid : a.buys)
      if (bid.quantity > 0) orders.push_back(Order{owner_of(b), Side::Buy, bid.price, bid.quantity, 0});
    for (const Bid& bid : a.sells)
      if (bid.quantity > 0) orders.push_back(Order{owner_of(b), Side::SellBid, bid.price, bid.quantity, 0});
  }
  try {
    return normalize_book(orders, config.book_limits());
  } catch (const InvalidInput& e) {
    throw InvalidInput(std::string("invalid joint action: ") + e.what());
  }
}

/// One PDA round: clear the book, charge λ per net cleared unit, and carry
/// uncleared asks (partially cleared ones at reduced quantity) into the next state.
inline StepResult step(const MarketState& state, const JointAction& action, const GameConfig& config) {
  StepResult r;
  r.book = build_book(state, action, config);
  r.outcome = clear(r.book, config.pricing_rule(), config.self_match_guard());
  const std::size_t n = state.players();
  r.costs.assign(n, 0.0);
  r.next.round = state.round + 1;
  r.next.demand = state.demand;
  r.next.prosumer_supply = state.prosumer_supply;
  for (const Fill& f : r.outcome.fills) {
    if (f.order.owner == kWholesaleSupplier) {
      if (f.order.quantity > f.cleared) r.next.supply_curve.push_back(SupplyOffer{f.order.price, f.order.quantity - f.cleared});
      continue;
    }
    const std::size_t b = f.order.owner - 1;
    const double amount = r.outcome.clearing_price * config.resolution().to_quantity(f.cleared);
    if (f.order.side == Side::Buy) {
      r.next.demand[b] -= f.cleared;
      r.costs[b] += amount;
    } else {
      r.next.prosumer_supply[b] -= f.cleared;
      r.costs[b] -= amount;
    }
  }
  sort_supply_curve(r.next.supply_curve);
  return r;
}

/// Terminal cost Υ·Q^{b,H+1}_+ per player. Unsold prosumer supply is not paid.
inline std::vector<double> settle_balancing(const MarketState& state, const GameConfig& config) {
  if (state.round != config.horizon() + 1)
    throw InvalidInput("balancing settles at round H+1 = " + std::to_string(config.horizon() + 1));
  std::vector<double> costs;
  costs.reserve(state.players());
  for (Qty q : state.demand) costs.push_back(config.balancing_price() * config.resolution().to_quantity(q));
  return costs;
}

/// Deterministic Markov policy of one player.
using Policy = std::function<PlayerAction(const MarketState&, std::size_t player, const GameConfig&)>;

inline PlayerAction idle_policy(const MarketState&, std::size_t, const GameConfig&) { return {}; }

struct RoundRecord {
  MarketState state;
  JointAction action;
  ClearingOutcome outcome;
  std::vector<double> costs;
};

struct Trajectory {
  std::vector<RoundRecord> rounds;
  MarketState final_state;
  std::vector<double> terminal_costs;

  /// Σ_r C^{b,r} from the first recorded round through H+1.
  std::vector<double> values() const {
    std::vector<double> v = terminal_costs;
    for (const RoundRecord& r : rounds)
      for (std::size_t b = 0; b < v.size(); ++b) v[b] += r.costs[b];
    return v;
  }
};

inline Trajectory rollout(std::span<const Policy> profile, const MarketState& start, const GameConfig& config) {
  if (profile.size() != start.players()) throw InvalidInput("policy profile size does not match player count");
  if (start.round < 1 || start.round > config.horizon() + 1) throw InvalidInput("start round outside [1, H+1]");
  Trajectory t;
  MarketState state = start;
  while (state.round <= config.horizon()) {
    JointAction action;
    action.reserve(profile.size());
    for (std::size_t b = 0; b < profile.size(); ++b) action.push_back(profile[b](state, b, config));
    StepResult s = step(state, action, config);
    t.rounds.push_back(RoundRecord{std::move(state), std::move(action), std::move(s.outcome), std::move(s.costs)});
    state = std::move(s.next);
  }
  t.terminal_costs = settle_balancing(state, config);
  t.final_state = std::move(state);
  return t;
}

/// V^h_π for every player, h = start.round.
inline std::vector<double> evaluate_value(std::span<const Policy> profile, const MarketState& start,
                                          const GameConfig& config) {
  return rollout(profile, start, config).values();
}

// JSON-lines export: one object per round, then a terminal object.
//   {"schema":"pda.trajectory/1","round":h,"lambda":..,"total_cleared":..,
//    "supply_curve":[[p,q],..],"demand":[..],"prosumer_supply":[..],
//    "players":[{"id":b,"bought":..,"sold":..,"cost":..}]}
//   {"schema":"pda.trajectory/1","round":H+1,"terminal":true,"demand":[..],"balancing":[..],"values":[..]}
// Quantities are in real units.
inline nlohmann::json round_record_json(const RoundRecord& r, const GameConfig& config) {
  const Resolution& res = config.resolution();
  nlohmann::json j;
  j["schema"] = "pda.trajectory/1";
  j["round"] = r.state.round;
  j["degenerate"] = r.outcome.degenerate;
  j["lambda"] = r.outcome.degenerate ? nlohmann::json(nullptr) : nlohmann::json(r.outcome.clearing_price);
  j["total_cleared"] = res.to_quantity(r.outcome.total_cleared);
  auto curve = nlohmann::json::array();
  for (const SupplyOffer& s : r.state.supply_curve) curve.push_back({s.price, res.to_quantity(s.quantity)});
  j["supply_curve"] = std::move(curve);
  auto demand = nlohmann::json::array(), supply = nlohmann::json::array(), players = nlohmann::json::array();
  for (std::size_t b = 0; b < r.state.players(); ++b) {
    demand.push_back(res.to_quantity(r.state.demand[b]));
    supply.push_back(res.to_quantity(r.state.prosumer_supply[b]));
    players.push_back({{"id", b + 1},
                       {"bought", res.to_quantity(r.outcome.bought_by(owner_of(b)))},
                       {"sold", res.to_quantity(r.outcome.sold_by(owner_of(b)))},
                       {"cost", r.costs[b]}});
  }
  j["demand"] = std::move(demand);
  j["prosumer_supply"] = std::move(supply);
  j["players"] = std::move(players);
  return j;
}

inline void write_trajectory_jsonl(std::ostream& out, const Trajectory& t, const GameConfig& config) {
  for (const RoundRecord& r : t.rounds) out << round_record_json(r, config).dump() << '\n';
  nlohmann::json end;
  end["schema"] = "pda.trajectory/1";
  end["round"] = t.final_state.round;
  end["terminal"] = true;
  auto demand = nlohmann::json::array();
  for (Qty q : t.final_state.demand) demand.push_back(config.resolution().to_quantity(q));
  end["demand"] = std::move(demand);
  end["balancing"] = t.terminal_costs;
  end["values"] = t.values();
  out << end.dump() << '\n';
}

// Instance serialization shared by replay files and configs. Quantities are
// stored in real units.
inline nlohmann::json rule_json(const PricingRule& rule) {
  if (const auto* kd = std::get_if<KDouble>(&rule)) return {{"rule", "kdouble"}, {"k", kd->k}};
  static const char* picks[] = {"lower_ask", "midpoint", "upper_bid"};
  return {{"rule", "merit_order"}, {"pick", picks[static_cast<int>(std::get<MeritOrderDual>(rule).pick)]}};
}

inline PricingRule rule_from_json(const nlohmann::json& j) {
  const std::string name = j.value("rule", "kdouble");
  if (name == "kdouble") return KDouble{j.value("k", 0.5)};
  if (name == "merit_order") {
    const std::string pick = j.value("pick", "midpoint");
    if (pick == "lower_ask") return MeritOrderDual{DualPick::LowerAsk};
    if (pick == "upper_bid") return MeritOrderDual{DualPick::UpperBid};
    if (pick == "midpoint") return MeritOrderDual{DualPick::Midpoint};
    throw InvalidInput("unknown dual pick '" + pick + "'");
  }
  throw InvalidInput("unknown pricing rule '" + name + "'");
}

inline nlohmann::json params_json(const GameParams& p) {
  nlohmann::json j{{"p_max", p.p_max},
                   {"balancing_price", p.balancing_price},
                   {"horizon", p.horizon},
                   {"pricing_rule", rule_json(p.pricing_rule)},
                   {"resolution", p.resolution.unit()},
                   {"epsilon", p.epsilon},
                   {"self_match_guard", p.self_match_guard},
                   {"premise_override", p.premise_override}};
  if (p.q_max != std::numeric_limits<Qty>::max()) j["q_max"] = p.resolution.to_quantity(p.q_max);
  return j;
}

inline GameParams params_from_json(const nlohmann::json& j) {
  try {
    GameParams p;
    p.resolution = Resolution(j.value("resolution", 0.001));
    p.p_max = j.value("p_max", p.p_max);
    p.balancing_price = j.at("balancing_price").get<double>();
    p.horizon = j.at("horizon").get<std::size_t>();
    if (j.contains("pricing_rule")) p.pricing_rule = rule_from_json(j["pricing_rule"]);
    p.epsilon = j.value("epsilon", p.epsilon);
    p.self_match_guard = j.value("self_match_guard", true);
    p.premise_override = j.value("premise_override", false);
    if (j.contains("q_max")) p.q_max = p.resolution.to_units(j["q_max"].get<double>());
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("game parameters: ") + e.what());
  }
}

inline nlohmann::json state_json(const MarketState& s, const Resolution& res) {
  nlohmann::json j;
  j["round"] = s.round;
  auto curve = nlohmann::json::array();
  for (const SupplyOffer& o : s.supply_curve) curve.push_back({o.price, res.to_quantity(o.quantity)});
  j["asks"] = std::move(curve);
  auto demand = nlohmann::json::array(), supply = nlohmann::json::array();
  for (Qty q : s.demand) demand.push_back(res.to_quantity(q));
  for (Qty q : s.prosumer_supply) supply.push_back(res.to_quantity(q));
  j["demand"] = std::move(demand);
  j["prosumer_supply"] = std::move(supply);
  return j;
}

/// Reads a state without the round-1 invariant check, so mid-game states
/// from replay files load as written.
inline MarketState state_from_json(const nlohmann::json& j, const Resolution& res) {
  try {
    MarketState s;
    s.round = j.value("round", std::size_t{1});
    for (const auto& a : j.at("asks")) {
      const SupplyOffer o{a.at(0).get<double>(), res.to_units(a.at(1).get<double>())};
      if (o.quantity <= 0 || !(o.price >= 0.0)) throw InvalidInput("invalid ask in state");
      s.supply_curve.push_back(o);
    }
    for (const auto& q : j.at("demand")) s.demand.push_back(res.to_units(q.get<double>()));
    if (j.contains("prosumer_supply"))
      for (const auto& q : j["prosumer_supply"]) s.prosumer_supply.push_back(res.to_units(q.get<double>()));
    else
      s.prosumer_supply.assign(s.demand.size(), 0);
    if (s.demand.empty() || s.prosumer_supply.size() != s.demand.size())
      throw InvalidInput("state needs matching demand and prosumer_supply arrays");
    for (std::size_t b = 0; b < s.demand.size(); ++b)
      if (s.demand[b] < 0 || s.prosumer_supply[b] < 0) throw InvalidInput("negative quantity in state");
    sort_supply_curve(s.supply_curve);
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("market state: ") + e.what());
  }
}

}  // namespace pda
