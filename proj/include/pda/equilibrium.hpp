#pragma once
#include <algorithm>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "pda/game.hpp"

namespace pda {

/// One entry of the combined supply curve: an ask (owner 0) or a prosumer
/// sell bid placed at its equilibrium price.
struct CurveEntry {
  Price price{0.0};
  Qty quantity{0};
  ParticipantId owner{kWholesaleSupplier};
};

/// Indices are 1-based; 0 means undefined. u and v0 count asks, v and z count
/// positions in the combined curve.
struct EquilibriumIndices {
  bool adequate{true};
  std::size_t u{0};
  std::vector<std::size_t> v;
  std::size_t v0{0};
  std::size_t v0_position{0};
  std::size_t z{0};
  bool z_sentinel{false};
  std::size_t phi{0};  // player index
  bool phi_fallback{false};
  Price p_u{0.0};
  Price p_z{0.0};
  std::vector<std::size_t> priority;
  std::vector<CurveEntry> combined;
};

namespace detail {

// Least 1-based i with target < cum(i) (strict) or target <= cum(i); 0 if none.
template <class Range>
std::size_t first_covering(const Range& entries, Qty target, bool strict) {
  Qty cum = 0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    cum += entries[i].quantity;
    if (strict ? target < cum : target <= cum) return i + 1;
  }
  return 0;
}

inline std::vector<std::size_t> priority_order(const MarketState& state) {
  std::vector<std::size_t> all(state.players());
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::stable_sort(all.begin(), all.end(),
                   [&](std::size_t a, std::size_t b) { return state.demand[a] > state.demand[b]; });
  std::vector<std::size_t> active;
  for (std::size_t b : all)
    if (state.demand[b] > 0) active.push_back(b);
  return active.empty() ? all : active;
}

inline void sort_combined(std::vector<CurveEntry>& curve) {
  std::stable_sort(curve.begin(), curve.end(), [](const CurveEntry& a, const CurveEntry& b) {
    if (a.price != b.price) return a.price < b.price;
    if (a.quantity != b.quantity) return a.quantity > b.quantity;
    // sell bids before asks, then by owner, as in the canonical book order
    const bool a_sell = a.owner != kWholesaleSupplier, b_sell = b.owner != kWholesaleSupplier;
    if (a_sell != b_sell) return a_sell;
    return a.owner < b.owner;
  });
}

inline std::size_t position_of_ask(const std::vector<CurveEntry>& combined, const std::vector<SupplyOffer>& asks,
                                   std::size_t ask_index) {
  // ask_index-th ask (1-based) in curve order; asks keep their relative order
  std::size_t seen = 0;
  for (std::size_t i = 0; i < combined.size(); ++i) {
    if (combined[i].owner != kWholesaleSupplier) continue;
    if (++seen == ask_index) return i + 1;
  }
  (void)asks;
  return 0;
}

// A bid at the price of entry z also meets every later entry at that price,
// so z is moved to the last of them.
inline std::size_t last_at_same_price(const std::vector<CurveEntry>& curve, std::size_t z) {
  if (z == 0) return 0;
  while (z < curve.size() && curve[z].price == curve[z - 1].price) ++z;
  return z;
}

}  // namespace detail

/// Sell price of the equilibrium profile for a player holding `supply` units.
inline Price mpne_sell_price(const EquilibriumIndices& ix, const MarketState& state, Qty supply,
                             const GameConfig& config) {
  if (!ix.adequate) return config.balancing_price() - config.epsilon();
  if (ix.u == 0) return config.p_max() - config.epsilon();
  const Qty q_u = state.supply_curve[ix.u - 1].quantity;
  return supply > q_u ? ix.p_u : ix.p_u - config.epsilon();
}

inline EquilibriumIndices compute_indices(const MarketState& state, const GameConfig& config) {
  if (state.players() != config.players()) throw InvalidInput("state player count does not match config");
  const std::size_t n = state.players();
  const std::vector<SupplyOffer>& asks = state.supply_curve;
  const Qty q_d = state.total_demand();
  const Qty q_s = state.wholesale_supply();
  const Qty q_minus = state.total_prosumer_supply();
  const std::size_t hh = config.horizon() - std::min(config.horizon(), state.round);

  EquilibriumIndices ix;
  ix.adequate = q_s >= q_d;
  ix.priority = detail::priority_order(state);
  ix.v.assign(n, 0);

  if (ix.adequate) {
    if (!asks.empty()) {
      ix.u = q_d - q_minus <= 0 ? 1 : detail::first_covering(asks, q_d - q_minus, false);
      ix.p_u = asks[ix.u - 1].price;
    } else {
      ix.p_u = config.p_max();
    }
    for (const SupplyOffer& a : asks) ix.combined.push_back(CurveEntry{a.price, a.quantity, kWholesaleSupplier});
    for (std::size_t b = 0; b < n; ++b)
      if (state.prosumer_supply[b] > 0)
        ix.combined.push_back(
            CurveEntry{mpne_sell_price(ix, state, state.prosumer_supply[b], config), state.prosumer_supply[b], owner_of(b)});
    detail::sort_combined(ix.combined);
    for (std::size_t b = 0; b < n; ++b)
      ix.v[b] = detail::first_covering(ix.combined, q_d - state.demand[b], true);
    if (ix.u > 0) {
      ix.v0 = ix.u > hh ? ix.u - hh : 1;
      ix.v0_position = detail::position_of_ask(ix.combined, asks, ix.v0);
    }
    std::optional<std::size_t> chosen;
    for (std::size_t b : ix.priority)
      if (ix.v[b] > 0 && ix.v[b] <= ix.v0_position) chosen = b;
    ix.phi_fallback = !chosen;
    ix.phi = chosen.value_or(ix.priority.front());
    ix.z = detail::last_at_same_price(ix.combined, std::max(ix.v[ix.phi], ix.v0_position));
    if (ix.z == 0) {
      ix.z_sentinel = true;
      ix.p_z = config.p_max();
    } else {
      ix.p_z = ix.combined[ix.z - 1].price;
    }
    return ix;
  }

  // Supply short of demand: every ask is needed.
  ix.u = asks.size();
  ix.p_u = asks.empty() ? config.p_max() : asks.back().price;
  for (const SupplyOffer& a : asks) ix.combined.push_back(CurveEntry{a.price, a.quantity, kWholesaleSupplier});
  for (std::size_t b = 0; b < n; ++b)
    if (state.prosumer_supply[b] > 0)
      ix.combined.push_back(CurveEntry{config.balancing_price() - config.epsilon(), state.prosumer_supply[b], owner_of(b)});
  detail::sort_combined(ix.combined);
  Qty cum = 0;
  ix.phi = ix.priority.back();
  for (std::size_t b : ix.priority) {
    cum += state.demand[b];
    if (q_s <= cum) {
      ix.phi = b;
      break;
    }
  }
  if (ix.phi == ix.priority.back() && !asks.empty()) {
    ix.v[ix.phi] = detail::first_covering(asks, q_d - state.demand[ix.phi], true);
    if (ix.v[ix.phi] == 0) ix.v[ix.phi] = asks.size();
    ix.v0 = ix.u > hh ? ix.u - hh : 1;
    ix.v0_position = ix.v0;
    ix.z = detail::last_at_same_price(ix.combined, std::max(ix.v[ix.phi], ix.v0));
    ix.p_z = ix.combined[ix.z - 1].price;
  } else {
    ix.z_sentinel = true;
    ix.p_z = config.p_max();
  }
  return ix;
}

struct MpneBid {
  Bid buy;
  Bid sell;
  bool epsilon_used{false};

  PlayerAction action() const {
    PlayerAction a;
    if (buy.quantity > 0) a.buys.push_back(buy);
    if (sell.quantity > 0) a.sells.push_back(sell);
    return a;
  }
};

inline MpneBid mpne_bid(const EquilibriumIndices& ix, const MarketState& state, std::size_t player,
                        const GameConfig& config) {
  MpneBid bid;
  bid.buy = Bid{player == ix.phi ? ix.p_z : config.p_max(), state.demand.at(player)};
  const Qty supply = state.prosumer_supply.at(player);
  bid.sell = Bid{mpne_sell_price(ix, state, supply, config), supply};
  bid.epsilon_used = supply > 0 && (!ix.adequate || ix.u == 0 || supply <= state.supply_curve[ix.u - 1].quantity);
  return bid;
}

inline MpneBid mpne_policy(const MarketState& state, std::size_t player, const GameConfig& config) {
  return mpne_bid(compute_indices(state, config), state, player, config);
}

inline PlayerAction mpne_action(const MarketState& state, std::size_t player, const GameConfig& config) {
  return mpne_policy(state, player, config).action();
}

inline JointAction mpne_joint_action(const MarketState& state, const GameConfig& config) {
  const EquilibriumIndices ix = compute_indices(state, config);
  JointAction joint;
  for (std::size_t b = 0; b < state.players(); ++b) joint.push_back(mpne_bid(ix, state, b, config).action());
  return joint;
}

inline std::vector<Policy> mpne_profile(std::size_t players) { return std::vector<Policy>(players, Policy{mpne_action}); }

struct PredictedClearing {
  Price lambda{0.0};
  Qty total{0};
  std::vector<Qty> bought;
  std::vector<Qty> sold;
  std::vector<SupplyOffer> residual_asks;
};

namespace detail {

// Hands out `volume` units over groups of equal rank: whole groups while they
// fit, then an equal split with leftover units in list order.
template <class Key>
void split_by_rank(const std::vector<std::size_t>& items, const std::vector<Qty>& qty, Key same_rank, Qty volume,
                   std::vector<Qty>& out) {
  std::size_t i = 0;
  while (i < items.size() && volume > 0) {
    std::size_t j = i + 1;
    while (j < items.size() && same_rank(items[i], items[j])) ++j;
    Qty level = 0;
    for (std::size_t t = i; t < j; ++t) level += qty[items[t]];
    if (level <= volume) {
      for (std::size_t t = i; t < j; ++t) out[items[t]] = qty[items[t]];
      volume -= level;
    } else {
      const Qty share = volume / static_cast<Qty>(j - i);
      Qty extra = volume % static_cast<Qty>(j - i);
      for (std::size_t t = i; t < j; ++t) {
        out[items[t]] = share + (extra > 0 ? 1 : 0);
        if (extra > 0) --extra;
      }
      volume = 0;
    }
    i = j;
  }
}

}  // namespace detail

/// Clearing statistics implied by the equilibrium profile, computed from the
/// indices alone: every player but φ is served in full, φ takes what remains of
/// the combined curve up to z, and the price is p_z.
inline PredictedClearing predict_clearing(const MarketState& state, const GameConfig& config) {
  const EquilibriumIndices ix = compute_indices(state, config);
  const std::size_t n = state.players();
  PredictedClearing p;
  p.bought.assign(n, 0);
  p.sold.assign(n, 0);
  const Qty q_d = state.total_demand();

  if (!ix.z_sentinel) {
    Qty reach = 0;
    for (std::size_t i = 0; i < ix.z; ++i) reach += ix.combined[i].quantity;
    p.total = std::min(reach, q_d);
    Qty others = 0;
    for (std::size_t b = 0; b < n; ++b)
      if (b != ix.phi) {
        p.bought[b] = state.demand[b];
        others += state.demand[b];
      }
    p.bought[ix.phi] = p.total - others;
    p.lambda = ix.p_z;
  } else {
    // Everyone bids p_max; supply goes to players by priority.
    Qty supply = 0;
    for (const CurveEntry& e : ix.combined)
      if (e.price <= config.p_max()) supply += e.quantity;
    p.total = std::min(supply, q_d);
    detail::split_by_rank(
        ix.priority, state.demand, [&](std::size_t a, std::size_t b) { return state.demand[a] == state.demand[b]; },
        p.total, p.bought);
    Price last_ask = 0.0;
    Qty cum = 0;
    for (const CurveEntry& e : ix.combined) {
      if (cum >= p.total) break;
      last_ask = e.price;
      cum += e.quantity;
    }
    if (p.total > 0) p.lambda = price_of(MarginalPair{last_ask, config.p_max()}, config.pricing_rule());
  }

  std::vector<std::size_t> order(ix.combined.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Qty> entry_qty, entry_sold(ix.combined.size(), 0);
  for (const CurveEntry& e : ix.combined) entry_qty.push_back(e.quantity);
  detail::split_by_rank(
      order, entry_qty,
      [&](std::size_t a, std::size_t b) {
        return ix.combined[a].price == ix.combined[b].price && ix.combined[a].quantity == ix.combined[b].quantity;
      },
      p.total, entry_sold);
  for (std::size_t i = 0; i < ix.combined.size(); ++i) {
    const CurveEntry& e = ix.combined[i];
    if (e.owner == kWholesaleSupplier) {
      if (e.quantity > entry_sold[i]) p.residual_asks.push_back(SupplyOffer{e.price, e.quantity - entry_sold[i]});
    } else {
      p.sold[e.owner - 1] += entry_sold[i];
    }
  }
  sort_supply_curve(p.residual_asks);
  return p;
}

/// Closed-form V^h for every player: the predicted clearing is rolled forward
/// on the residual curve through round H, then unmet demand pays Υ.
inline std::vector<double> mpne_values(const MarketState& start, const GameConfig& config) {
  MarketState state = start;
  std::vector<double> values(state.players(), 0.0);
  const Resolution& res = config.resolution();
  while (state.round <= config.horizon()) {
    PredictedClearing p = predict_clearing(state, config);
    for (std::size_t b = 0; b < state.players(); ++b) {
      values[b] += p.lambda * res.to_quantity(p.bought[b] - p.sold[b]);
      state.demand[b] -= p.bought[b];
      state.prosumer_supply[b] -= p.sold[b];
    }
    state.supply_curve = std::move(p.residual_asks);
    ++state.round;
  }
  for (std::size_t b = 0; b < state.players(); ++b)
    values[b] += config.balancing_price() * res.to_quantity(state.demand[b]);
  return values;
}

inline double mpne_value(const MarketState& state, std::size_t player, const GameConfig& config) {
  return mpne_values(state, config).at(player);
}

inline nlohmann::json indices_json(const EquilibriumIndices& ix) {
  nlohmann::json j;
  j["adequate"] = ix.adequate;
  j["u"] = ix.u;
  j["v"] = ix.v;
  j["v0"] = ix.v0;
  j["z"] = ix.z_sentinel ? nlohmann::json(nullptr) : nlohmann::json(ix.z);
  j["phi"] = ix.phi + 1;
  j["phi_fallback"] = ix.phi_fallback;
  j["p_u"] = ix.p_u;
  j["p_z"] = ix.p_z;
  return j;
}

}  // namespace pda
