#pragma once
#include <cstring>
#include <map>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "pda/equilibrium.hpp"

namespace pda {

/// Enumeration limits that keep exhaustive best responses tractable.
struct SizeCap {
  std::size_t max_players{3};
  std::size_t max_horizon{3};
  std::size_t max_asks{8};
  Qty max_quantity{20};
};

inline void check_size_cap(const MarketState& state, const GameConfig& config, const SizeCap& cap = {}) {
  auto reject = [](const std::string& what) { throw InvalidInput("instance too large for enumeration: " + what); };
  if (state.players() > cap.max_players) reject("more than " + std::to_string(cap.max_players) + " players");
  if (config.horizon() > cap.max_horizon) reject("horizon above " + std::to_string(cap.max_horizon));
  if (state.supply_curve.size() > cap.max_asks) reject("more than " + std::to_string(cap.max_asks) + " asks");
  for (const SupplyOffer& s : state.supply_curve)
    if (s.quantity > cap.max_quantity) reject("ask quantity above cap");
  for (std::size_t b = 0; b < state.players(); ++b)
    if (state.demand[b] > cap.max_quantity || state.prosumer_supply[b] > cap.max_quantity) reject("player quantity above cap");
}

struct GridConfig {
  std::size_t density{12};        // uniform points over [0, p_max], endpoints included
  bool anchors{true};             // p_z±ε, p_u±ε and every ask price ±ε
  bool empty_side{true};          // the "no bid" option on each side
  std::vector<double> quantity_fractions{0.25, 0.5, 1.0};  // of the outstanding quantity
  bool quantity_minus_one{true};  // Q − 1 unit
  bool splits{true};              // two-way buy splits
  bool three_way_splits{true};
};

/// The action set offered to one deviating player at one state.
struct DeviationGrid {
  std::vector<Price> buy_prices;
  std::vector<Price> sell_prices;
  std::vector<Qty> buy_quantities;
  std::vector<Qty> sell_quantities;
  std::vector<PlayerAction> split_buys;
  bool empty_side{true};

  std::size_t nominal_size() const {
    const std::size_t buys = buy_prices.size() * buy_quantities.size() + split_buys.size() + (empty_side ? 1 : 0);
    const std::size_t sells = sell_prices.size() * sell_quantities.size() + (empty_side ? 1 : 0);
    return buys * sells;
  }
};

namespace detail {

inline std::vector<Qty> quantity_points(Qty q, const GridConfig& g) {
  std::set<Qty> pts;
  if (q <= 0) return {};
  for (double f : g.quantity_fractions) {
    const Qty v = static_cast<Qty>(std::llround(f * static_cast<double>(q)));
    if (v > 0) pts.insert(std::min(v, q));
  }
  if (g.quantity_minus_one && q > 1) pts.insert(q - 1);
  return {pts.rbegin(), pts.rend()};
}

inline void add_price(std::set<Price>& out, Price p, Price hi) {
  if (p >= 0.0 && p <= hi) out.insert(p);
}

}  // namespace detail

inline DeviationGrid make_grid(const MarketState& state, std::size_t player, const GameConfig& config,
                               const GridConfig& g = {}) {
  const EquilibriumIndices ix = compute_indices(state, config);
  const MpneBid star = mpne_bid(ix, state, player, config);
  const Price p_max = config.p_max();
  const Price sell_hi = config.book_limits().sell_bid_max;
  const Price eps = config.epsilon();
  std::set<Price> buy, sell;
  for (std::size_t i = 0; i < g.density; ++i) {
    const Price p = g.density == 1 ? p_max : p_max * static_cast<double>(i) / static_cast<double>(g.density - 1);
    buy.insert(p);
    sell.insert(p);
  }
  if (g.anchors) {
    for (Price base : {ix.p_z, ix.p_u, star.buy.price, star.sell.price, p_max, 0.0}) {
      for (Price p : {base - eps, base, base + eps}) {
        detail::add_price(buy, p, p_max);
        detail::add_price(sell, p, sell_hi);
      }
    }
    for (const SupplyOffer& a : state.supply_curve)
      for (Price p : {a.price - eps, a.price, a.price + eps}) {
        detail::add_price(buy, p, p_max);
        detail::add_price(sell, p, sell_hi);
      }
    detail::add_price(sell, config.balancing_price() - eps, sell_hi);
  }
  // The equilibrium bid itself is always present.
  detail::add_price(buy, star.buy.price, p_max);
  detail::add_price(sell, star.sell.price, sell_hi);

  DeviationGrid grid;
  grid.empty_side = g.empty_side;
  grid.buy_prices.assign(buy.begin(), buy.end());
  grid.sell_prices.assign(sell.begin(), sell.end());
  grid.buy_quantities = detail::quantity_points(state.demand.at(player), g);
  grid.sell_quantities = detail::quantity_points(state.prosumer_supply.at(player), g);

  const Qty q = state.demand.at(player);
  if (g.splits && q >= 2) {
    const Qty half = q / 2;
    for (Price first : {p_max, ix.p_z})
      for (Price second : grid.buy_prices)
        grid.split_buys.push_back(PlayerAction{{Bid{first, half}, Bid{second, q - half}}, {}});
  }
  if (g.three_way_splits && q >= 3) {
    const Qty third = q / 3;
    std::set<Price> anchors{p_max, ix.p_z, ix.p_u};
    std::vector<Price> a(anchors.begin(), anchors.end());
    for (Price p1 : a)
      for (Price p2 : a)
        for (Price p3 : a)
          if (p1 < p2 && p2 < p3 && p3 <= p_max)
            grid.split_buys.push_back(PlayerAction{{Bid{p1, third}, Bid{p2, third}, Bid{p3, q - 2 * third}}, {}});
  }
  return grid;
}

/// Distinct per-round actions of the grid for `player`. A deviation policy
/// picks one of these at every round; the equilibrium action is included.
inline std::vector<PlayerAction> enumerate_deviations(const MarketState& state, std::size_t player,
                                                      const GameConfig& config, const GridConfig& g = {},
                                                      const SizeCap& cap = {}) {
  check_size_cap(state, config, cap);
  const DeviationGrid grid = make_grid(state, player, config, g);
  std::vector<PlayerAction> buys, sells;
  if (grid.empty_side || grid.buy_quantities.empty()) buys.push_back({});
  for (Price p : grid.buy_prices)
    for (Qty q : grid.buy_quantities) buys.push_back(PlayerAction{{Bid{p, q}}, {}});
  for (const PlayerAction& s : grid.split_buys) buys.push_back(s);
  if (grid.empty_side || grid.sell_quantities.empty()) sells.push_back({});
  for (Price p : grid.sell_prices)
    for (Qty q : grid.sell_quantities) sells.push_back(PlayerAction{{}, {Bid{p, q}}});

  std::vector<PlayerAction> out;
  out.reserve(buys.size() * sells.size() + 1);
  for (const PlayerAction& b : buys)
    for (const PlayerAction& s : sells) out.push_back(PlayerAction{b.buys, s.sells});
  const PlayerAction star = mpne_action(state, player, config);
  if (std::find(out.begin(), out.end(), star) == out.end()) out.push_back(star);
  return out;
}

namespace detail {

inline std::string state_key(const MarketState& s) {
  std::string key;
  auto put = [&key](const auto& v) { key.append(reinterpret_cast<const char*>(&v), sizeof(v)); };
  put(s.round);
  for (const SupplyOffer& o : s.supply_curve) {
    put(o.price);
    put(o.quantity);
  }
  key.push_back('|');
  for (Qty q : s.demand) put(q);
  for (Qty q : s.prosumer_supply) put(q);
  return key;
}

// Exact best response of one player over grid policies, everyone else on the
// equilibrium profile. Values are memoized per state.
class BestResponse {
public:
  BestResponse(std::size_t player, const GameConfig& config, const GridConfig& grid)
      : player_(player), config_(config), grid_(grid) {}

  double value(const MarketState& s) {
    if (s.round > config_.horizon())
      return config_.balancing_price() * config_.resolution().to_quantity(s.demand[player_]);
    const std::string key = state_key(s);
    if (auto it = memo_.find(key); it != memo_.end()) return it->second.first;
    double best = std::numeric_limits<double>::infinity();
    PlayerAction best_action;
    JointAction joint = mpne_joint_action(s, config_);
    for (const PlayerAction& a : enumerate_deviations(s, player_, config_, grid_, uncapped())) {
      joint[player_] = a;
      const double v = continue_from(s, joint);
      if (v < best) {
        best = v;
        best_action = a;
      }
    }
    memo_.emplace(key, std::make_pair(best, best_action));
    return best;
  }

  /// Value of playing `action` now, then responding optimally.
  double value_of(const MarketState& s, const PlayerAction& action) {
    JointAction joint = mpne_joint_action(s, config_);
    joint.at(player_) = action;
    return continue_from(s, joint);
  }

  const PlayerAction& best_action(const MarketState& s) {
    value(s);
    return memo_.at(state_key(s)).second;
  }

  std::size_t states() const { return memo_.size(); }

private:
  static SizeCap uncapped() {
    SizeCap c;
    c.max_players = c.max_horizon = c.max_asks = std::numeric_limits<std::size_t>::max();
    c.max_quantity = std::numeric_limits<Qty>::max();
    return c;
  }

  double continue_from(const MarketState& s, const JointAction& joint) {
    StepResult r = step(s, joint, config_);
    return r.costs[player_] + value(r.next);
  }

  std::size_t player_;
  const GameConfig& config_;
  GridConfig grid_;
  std::unordered_map<std::string, std::pair<double, PlayerAction>> memo_;
};

}  // namespace detail

struct DeviationCheck {
  std::size_t round{1};
  std::size_t player{0};
  MarketState state;
  PlayerAction deviation;  // first action of the best grid response
  double mpne_value{0.0};
  double deviation_value{0.0};
  double margin{0.0};      // mpne_value − deviation_value
  bool beyond_phi{false};  // player ranked after φ under short supply
};

struct DeviationReport {
  bool premise_violated{false};
  double slack{0.0};
  std::size_t checks{0};
  std::size_t violations{0};
  double max_margin{0.0};
  double max_beyond_phi_margin{0.0};
  std::size_t grid_density{0};
  std::size_t max_actions_per_state{0};
  std::optional<DeviationCheck> worst;
  std::vector<DeviationCheck> details;

  bool nash_holds() const { return violations == 0; }

  /// Associative, order-independent merge.
  void merge(const DeviationReport& other) {
    premise_violated = premise_violated || other.premise_violated;
    slack = std::max(slack, other.slack);
    checks += other.checks;
    violations += other.violations;
    max_beyond_phi_margin = std::max(max_beyond_phi_margin, other.max_beyond_phi_margin);
    grid_density = std::max(grid_density, other.grid_density);
    max_actions_per_state = std::max(max_actions_per_state, other.max_actions_per_state);
    if (other.worst && (!worst || other.worst->margin > worst->margin)) worst = other.worst;
    max_margin = std::max(max_margin, other.max_margin);
  }
};

/// ε·Q_max + one resolution unit priced at p_max.
inline double default_slack(const MarketState& initial, const GameConfig& config) {
  const Qty q_max = *std::max_element(initial.demand.begin(), initial.demand.end());
  return config.epsilon() * config.resolution().to_quantity(q_max) + config.resolution().unit() * config.p_max();
}

/// Compares, at every state on the equilibrium path and for every player, the
/// equilibrium value against the best grid deviation policy.
inline DeviationReport verify_mpne(const MarketState& initial, const GameConfig& config, const GridConfig& grid = {},
                                   std::optional<double> slack = std::nullopt, const SizeCap& cap = {}) {
  check_size_cap(initial, config, cap);
  DeviationReport report;
  report.premise_violated = !config.premise_holds();
  report.slack = slack.value_or(default_slack(initial, config));
  report.grid_density = grid.density;

  const std::vector<Policy> profile = mpne_profile(initial.players());
  std::vector<detail::BestResponse> responders;
  for (std::size_t b = 0; b < initial.players(); ++b) responders.emplace_back(b, config, grid);

  MarketState state = initial;
  while (state.round <= config.horizon()) {
    const std::vector<double> star = evaluate_value(profile, state, config);
    const EquilibriumIndices ix = compute_indices(state, config);
    std::vector<bool> beyond(state.players(), false);
    if (!ix.adequate) {
      bool after = false;
      for (std::size_t b : ix.priority) {
        if (after) beyond[b] = true;
        if (b == ix.phi) after = true;
      }
    }
    for (std::size_t b = 0; b < state.players(); ++b) {
      DeviationCheck c;
      c.round = state.round;
      c.player = b;
      c.state = state;
      c.mpne_value = star[b];
      c.deviation_value = responders[b].value(state);
      c.deviation = responders[b].best_action(state);
      c.margin = c.mpne_value - c.deviation_value;
      c.beyond_phi = beyond[b];
      report.max_actions_per_state =
          std::max(report.max_actions_per_state, enumerate_deviations(state, b, config, grid, cap).size());
      ++report.checks;
      if (c.margin > report.slack) ++report.violations;
      if (c.beyond_phi) report.max_beyond_phi_margin = std::max(report.max_beyond_phi_margin, c.margin);
      if (c.margin > report.max_margin || !report.worst) {
        report.max_margin = std::max(report.max_margin, c.margin);
        if (!report.worst || c.margin > report.worst->margin) report.worst = c;
      }
      report.details.push_back(std::move(c));
    }
    state = step(state, mpne_joint_action(state, config), config).next;
  }
  return report;
}

/// Value of a single deviating action at `state`, followed by the best grid
/// continuation.
inline double deviation_value(const MarketState& state, std::size_t player, const PlayerAction& action,
                              const GameConfig& config, const GridConfig& grid = {}) {
  detail::BestResponse br(player, config, grid);
  return br.value_of(state, action);
}

struct SelfMatchReport {
  DeviationReport guarded;
  DeviationReport unguarded;
  bool condition_holds{false};  // p_{z,h+1} < p_{z,h}(1 + Q−/(2(Q− + Q+))) for some player and round
};

/// Runs the deviation check with the self-match guard on and off, and
/// evaluates the price condition under which selling to oneself pays.
inline SelfMatchReport check_self_match_manipulation(const MarketState& initial, const GameParams& params,
                                                     const GridConfig& grid = {}) {
  SelfMatchReport r;
  GameParams on = params, off = params;
  on.self_match_guard = true;
  off.self_match_guard = false;
  const GameConfig cfg_on = GameConfig::make(on, initial);
  const GameConfig cfg_off = GameConfig::make(off, initial);
  r.guarded = verify_mpne(initial, cfg_on, grid);
  r.unguarded = verify_mpne(initial, cfg_off, grid);
  MarketState state = initial;
  while (state.round < cfg_on.horizon()) {
    const Price pz = compute_indices(state, cfg_on).p_z;
    const MarketState next = step(state, mpne_joint_action(state, cfg_on), cfg_on).next;
    const Price pz_next = compute_indices(next, cfg_on).p_z;
    for (std::size_t b = 0; b < state.players(); ++b) {
      const double qm = static_cast<double>(state.prosumer_supply[b]);
      const double qp = static_cast<double>(state.demand[b]);
      if (qm > 0 && pz_next < pz * (1.0 + 0.5 * qm / (qm + qp))) r.condition_holds = true;
    }
    state = next;
  }
  return r;
}

struct InstanceSpec {
  std::size_t players{2};
  std::size_t horizon{2};
  bool adequate{true};
  bool prosumers{true};
  std::size_t min_asks{2};
  std::size_t max_asks{8};
  Qty max_ask_quantity{5};
  Qty max_demand{11};
  Qty max_prosumer_supply{3};
  PricingRule rule{acpr()};
};

struct Instance {
  MarketState state;
  GameParams params;

  GameConfig config() const { return GameConfig::make(params, state); }
};

/// Random small instance: strictly increasing ask prices, distinct player
/// demands, strict adequacy or shortage as requested. Υ = (γ + 1)·p_max.
inline Instance generate_instance(std::uint64_t seed, const InstanceSpec& spec) {
  if (spec.players < 1 || static_cast<Qty>(spec.players) > spec.max_demand)
    throw InvalidInput("cannot draw distinct demands for this many players");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> n_asks(spec.min_asks, spec.max_asks);
  std::uniform_int_distribution<Qty> ask_q(1, spec.max_ask_quantity);
  for (;;) {
    std::vector<int> price_pool(90);
    std::iota(price_pool.begin(), price_pool.end(), 5);
    std::shuffle(price_pool.begin(), price_pool.end(), rng);
    const std::size_t l = n_asks(rng);
    std::vector<int> prices(price_pool.begin(), price_pool.begin() + static_cast<std::ptrdiff_t>(l));
    std::sort(prices.begin(), prices.end());
    std::vector<SupplyOffer> asks;
    for (int p : prices) asks.push_back(SupplyOffer{static_cast<double>(p), ask_q(rng)});

    std::vector<Qty> pool(static_cast<std::size_t>(spec.max_demand));
    std::iota(pool.begin(), pool.end(), Qty{1});
    std::shuffle(pool.begin(), pool.end(), rng);
    std::vector<Qty> demand(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(spec.players));
    std::sort(demand.rbegin(), demand.rend());
    std::vector<Qty> supply;
    for (Qty d : demand) {
      const Qty hi = spec.prosumers ? std::min(d - 1, spec.max_prosumer_supply) : 0;
      supply.push_back(std::uniform_int_distribution<Qty>(0, hi)(rng));
    }
    Qty qs = 0, qd = 0;
    for (const SupplyOffer& a : asks) qs += a.quantity;
    for (Qty d : demand) qd += d;
    if (spec.adequate ? qs <= qd : qs >= qd) continue;

    Instance inst;
    inst.state = MarketState::initial(std::move(asks), std::move(demand), std::move(supply));
    inst.params.horizon = spec.horizon;
    inst.params.resolution = Resolution(1.0);
    inst.params.pricing_rule = spec.rule;
    const Qty q_max = *std::max_element(inst.state.demand.begin(), inst.state.demand.end());
    inst.params.balancing_price = (static_cast<double>(q_max) + 2.0) * inst.params.p_max;
    return inst;
  }
}

// Replay file: {"schema":"pda.replay/1","params":{..},"initial":{..},
//   "round":h,"player":b (1-based),"state":{..},"deviation":{"buys":[[p,q]..],"sells":[..]},
//   "mpne_value":..,"deviation_value":..,"slack":..}
inline nlohmann::json action_json(const PlayerAction& a, const Resolution& res) {
  auto side = [&](const std::vector<Bid>& bids) {
    auto arr = nlohmann::json::array();
    for (const Bid& b : bids) arr.push_back({b.price, res.to_quantity(b.quantity)});
    return arr;
  };
  return {{"buys", side(a.buys)}, {"sells", side(a.sells)}};
}

inline PlayerAction action_from_json(const nlohmann::json& j, const Resolution& res) {
  PlayerAction a;
  for (const auto& b : j.at("buys")) a.buys.push_back(Bid{b.at(0).get<double>(), res.to_units(b.at(1).get<double>())});
  for (const auto& s : j.at("sells")) a.sells.push_back(Bid{s.at(0).get<double>(), res.to_units(s.at(1).get<double>())});
  return a;
}

inline nlohmann::json replay_json(const Instance& inst, const DeviationCheck& c, double slack) {
  const Resolution& res = inst.params.resolution;
  return {{"schema", "pda.replay/1"},
          {"params", params_json(inst.params)},
          {"initial", state_json(inst.state, res)},
          {"round", c.round},
          {"player", c.player + 1},
          {"state", state_json(c.state, res)},
          {"deviation", action_json(c.deviation, res)},
          {"mpne_value", c.mpne_value},
          {"deviation_value", c.deviation_value},
          {"slack", slack}};
}

struct ReplayResult {
  double mpne_value{0.0};
  double deviation_value{0.0};
  double slack{0.0};
  bool violation{false};
};

inline ReplayResult replay(const nlohmann::json& j, const GridConfig& grid = {}) {
  try {
    if (j.value("schema", "") != "pda.replay/1") throw InvalidInput("not a pda.replay/1 document");
    Instance inst;
    inst.params = params_from_json(j.at("params"));
    const Resolution& res = inst.params.resolution;
    inst.state = state_from_json(j.at("initial"), res);
    const GameConfig config = inst.config();
    const MarketState state = state_from_json(j.at("state"), res);
    const std::size_t player = j.at("player").get<std::size_t>();
    if (player < 1 || player > state.players()) throw InvalidInput("player out of range");
    const PlayerAction action = action_from_json(j.at("deviation"), res);
    ReplayResult r;
    r.slack = j.value("slack", default_slack(inst.state, config));
    r.mpne_value = evaluate_value(mpne_profile(state.players()), state, config)[player - 1];
    r.deviation_value = deviation_value(state, player - 1, action, config, grid);
    r.violation = r.mpne_value - r.deviation_value > r.slack;
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("replay file: ") + e.what());
  }
}

}  // namespace pda
