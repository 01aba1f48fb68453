#pragma once
#include <optional>
#include <variant>
#include <vector>

#include "pda/book.hpp"

namespace pda {

/// λ = k·p̂_d + (1−k)·p_l. ACPR is k = 0.5.
struct KDouble {
  double k{0.5};
};

enum class DualPick : std::uint8_t { LowerAsk, Midpoint, UpperBid };

/// A point of the merit-order dual interval [p̂_d, p_l].
struct MeritOrderDual {
  DualPick pick{DualPick::Midpoint};
};

using PricingRule = std::variant<KDouble, MeritOrderDual>;

inline PricingRule acpr() { return KDouble{0.5}; }

inline void validate_rule(const PricingRule& rule) {
  if (const auto* kd = std::get_if<KDouble>(&rule); kd && !(kd->k >= 0.0 && kd->k <= 1.0))
    throw InvalidInput("k-double auction requires k in [0, 1]");
}

/// Prices of the last cleared supply-side order and last cleared buy bid.
struct MarginalPair {
  Price last_cleared_ask{0.0};
  Price last_cleared_bid{0.0};

  friend bool operator==(const MarginalPair&, const MarginalPair&) = default;
};

class NoMarginalPair : public std::logic_error {
public:
  NoMarginalPair() : std::logic_error("no marginal pair: nothing cleared") {}
};

inline Price price_of(const std::optional<MarginalPair>& marginal, const PricingRule& rule) {
  if (!marginal) throw NoMarginalPair();
  const Price ask = marginal->last_cleared_ask;
  const Price bid = marginal->last_cleared_bid;
  if (const auto* kd = std::get_if<KDouble>(&rule)) return kd->k * ask + (1.0 - kd->k) * bid;
  switch (std::get<MeritOrderDual>(rule).pick) {
    case DualPick::LowerAsk: return ask;
    case DualPick::UpperBid: return bid;
    case DualPick::Midpoint: break;
  }
  return 0.5 * ask + 0.5 * bid;
}

struct Fill {
  Order order;
  Qty cleared{0};
  // Buy bid withheld by the self-match guard.
  bool excluded{false};

  friend bool operator==(const Fill&, const Fill&) = default;
};

struct ClearingOutcome {
  Price clearing_price{0.0};
  Qty total_cleared{0};
  // Indexed by tag: supply side first, then demand side, as in the book.
  std::vector<Fill> fills;
  std::optional<MarginalPair> marginal;
  bool degenerate{true};

  Price last_cleared_ask_price() const { return marginal.value().last_cleared_ask; }
  Price last_cleared_bid_price() const { return marginal.value().last_cleared_bid; }

  Qty cleared(std::uint64_t tag) const { return fills.at(tag).cleared; }

  Qty bought_by(ParticipantId owner) const { return sum_for(owner, Side::Buy); }
  Qty sold_by(ParticipantId owner) const { return sum_for(owner, Side::SellBid) + sum_for(owner, Side::Ask); }

  bool operator==(const ClearingOutcome&) const = default;

private:
  Qty sum_for(ParticipantId owner, Side side) const {
    Qty total = 0;
    for (const Fill& f : fills)
      if (f.order.owner == owner && f.order.side == side) total += f.cleared;
    return total;
  }
};

/// Remark 1: a buyer is never matched against her own sell bids when those
/// bids are the entire supply side. Returns that prosumer, if any.
inline std::optional<ParticipantId> self_match_owner(const CombinedBook& book) {
  if (book.supply_side.empty()) return std::nullopt;
  const ParticipantId owner = book.supply_side.front().owner;
  if (owner == kWholesaleSupplier) return std::nullopt;
  for (const Order& o : book.supply_side)
    if (o.side != Side::SellBid || o.owner != owner) return std::nullopt;
  return owner;
}

namespace detail {

// Distributes `volume` over one side in priority order. Orders tied in price
// and quantity share the marginal remainder equally; leftover units go one at
// a time in tag order.
inline void allocate_side(const std::vector<Order>& side, const std::vector<bool>& eligible, Qty volume,
                          std::vector<Fill>& fills) {
  std::size_t i = 0;
  while (i < side.size() && volume > 0) {
    if (!eligible[i]) {
      ++i;
      continue;
    }
    std::vector<std::size_t> tied{i};
    std::size_t j = i + 1;
    for (; j < side.size(); ++j) {
      if (!eligible[j]) continue;
      if (side[j].price != side[i].price || side[j].quantity != side[i].quantity) break;
      tied.push_back(j);
    }
    const Qty q = side[i].quantity;
    const Qty level = q * static_cast<Qty>(tied.size());
    if (level <= volume) {
      for (std::size_t t : tied) fills[side[t].tag].cleared = q;
      volume -= level;
    } else {
      const Qty n = static_cast<Qty>(tied.size());
      const Qty share = volume / n;
      Qty remainder = volume % n;
      for (std::size_t t : tied) {
        fills[side[t].tag].cleared = share + (remainder > 0 ? 1 : 0);
        if (remainder > 0) --remainder;
      }
      volume = 0;
    }
    i = j;
  }
}

}  // namespace detail

/// Uniform-price clearing of a normalized book.
///
/// Matches the best remaining buy against the cheapest remaining supply while
/// the bid price is at least the supply price. The crossing volume is then
/// allocated by priority on each side, with the tied marginal group split
/// equally. A book with no crossing yields a degenerate outcome.
inline ClearingOutcome clear(const CombinedBook& book, const PricingRule& rule = acpr(), bool self_match_guard = true) {
  validate_rule(rule);
  ClearingOutcome out;
  out.fills.reserve(book.size());
  for (const Order& o : book.supply_side) out.fills.push_back(Fill{o, 0, false});
  for (const Order& o : book.demand_side) out.fills.push_back(Fill{o, 0, false});
  for (std::size_t t = 0; t < out.fills.size(); ++t)
    if (out.fills[t].order.tag != t) throw InvalidInput("book is not normalized");

  const auto guarded = self_match_guard ? self_match_owner(book) : std::nullopt;
  std::vector<bool> demand_ok(book.demand_side.size(), true);
  for (std::size_t i = 0; i < book.demand_side.size(); ++i) {
    if (guarded && book.demand_side[i].owner == *guarded) {
      demand_ok[i] = false;
      out.fills[book.demand_side[i].tag].excluded = true;
    }
  }
  const std::vector<bool> supply_ok(book.supply_side.size(), true);

  // Walk both curves to find the crossing volume and the marginal prices.
  Qty volume = 0;
  std::size_t d = 0, s = 0;
  Qty d_left = 0, s_left = book.supply_side.empty() ? 0 : book.supply_side[0].quantity;
  auto next_demand = [&] {
    while (d < book.demand_side.size() && !demand_ok[d]) ++d;
    d_left = d < book.demand_side.size() ? book.demand_side[d].quantity : 0;
  };
  next_demand();
  Price last_bid = 0.0, last_ask = 0.0;
  while (d < book.demand_side.size() && s < book.supply_side.size() &&
         book.demand_side[d].price >= book.supply_side[s].price) {
    const Qty m = std::min(d_left, s_left);
    volume += m;
    last_bid = book.demand_side[d].price;
    last_ask = book.supply_side[s].price;
    d_left -= m;
    s_left -= m;
    if (d_left == 0) {
      ++d;
      next_demand();
    }
    if (s_left == 0 && ++s < book.supply_side.size()) s_left = book.supply_side[s].quantity;
  }

  if (volume == 0) return out;
  out.total_cleared = volume;
  out.degenerate = false;
  out.marginal = MarginalPair{last_ask, last_bid};
  out.clearing_price = price_of(out.marginal, rule);

  detail::allocate_side(book.supply_side, supply_ok, volume, out.fills);
  detail::allocate_side(book.demand_side, demand_ok, volume, out.fills);
  return out;
}

}  // namespace pda
