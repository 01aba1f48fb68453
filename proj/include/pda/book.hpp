#pragma once
#include <algorithm>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "pda/types.hpp"

namespace pda {

/// Bounds enforced when orders enter a book. Sell bids get their own price
/// ceiling because the inadequate-supply equilibrium posts them at Υ − ε.
struct BookLimits {
  Price p_max{100.0};
  Price sell_bid_max{100.0};
  Qty q_max{std::numeric_limits<Qty>::max()};
};

/// One round's order book in clearing priority order.
///
/// supply_side holds asks and sell bids by ascending price, demand_side holds
/// buy bids by descending price. Equal prices rank larger quantities first;
/// orders equal in price and quantity are ordered by tag. Tags are reassigned
/// by normalize_book to 0..n-1 following that order (supply side first), so
/// tag order is priority order and outcomes can be indexed by tag.
struct CombinedBook {
  std::vector<Order> supply_side;
  std::vector<Order> demand_side;

  std::size_t size() const noexcept { return supply_side.size() + demand_side.size(); }
  bool empty() const noexcept { return size() == 0; }
};

inline void validate_order(const Order& o, const BookLimits& limits) {
  if (o.quantity <= 0) throw InvalidInput("order quantity must be positive");
  const Price ceiling = o.side == Side::SellBid ? limits.sell_bid_max : limits.p_max;
  if (!std::isfinite(o.price) || o.price < 0.0 || o.price > ceiling)
    throw InvalidInput("order price " + format_number(o.price) + " outside [0, " + format_number(ceiling) + "]");
  if (o.side == Side::Ask && o.quantity > limits.q_max) throw InvalidInput("ask quantity exceeds q_max");
}

/// Sorts raw orders into a CombinedBook. The result depends only on the
/// multiset of (side, price, quantity, owner); input order and incoming tags
/// are ignored.
inline CombinedBook normalize_book(std::span<const Order> raw, const BookLimits& limits = {}) {
  CombinedBook book;
  for (const Order& o : raw) {
    validate_order(o, limits);
    (is_supply(o.side) ? book.supply_side : book.demand_side).push_back(o);
  }
  std::sort(book.supply_side.begin(), book.supply_side.end(), [](const Order& a, const Order& b) {
    return std::tuple(a.price, -a.quantity, a.side, a.owner) < std::tuple(b.price, -b.quantity, b.side, b.owner);
  });
  std::sort(book.demand_side.begin(), book.demand_side.end(), [](const Order& a, const Order& b) {
    return std::tuple(-a.price, -a.quantity, a.owner) < std::tuple(-b.price, -b.quantity, b.owner);
  });
  std::uint64_t tag = 0;
  for (Order& o : book.supply_side) o.tag = tag++;
  for (Order& o : book.demand_side) o.tag = tag++;
  return book;
}

// Line format: `side price quantity owner`, side in {buy, sell, ask}, quantity
// in real units. Blank lines and lines starting with '#' are skipped.

inline Side parse_side(std::string_view token) {
  if (token == "buy") return Side::Buy;
  if (token == "sell") return Side::SellBid;
  if (token == "ask") return Side::Ask;
  throw InvalidInput("unknown side '" + std::string(token) + "'");
}

inline std::vector<Order> read_orders(std::istream& in, const Resolution& res) {
  std::vector<Order> orders;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string side, price, qty, owner, extra;
    if (!(fields >> side) || side.front() == '#') continue;
    if (!(fields >> price >> qty >> owner) || (fields >> extra))
      throw InvalidInput("line " + std::to_string(line_no) + ": expected 'side price quantity owner'");
    try {
      const double owner_value = parse_number(owner);
      if (owner_value < 0 || owner_value != std::floor(owner_value)) throw InvalidInput("owner must be a non-negative integer");
      orders.push_back(Order{static_cast<ParticipantId>(owner_value), parse_side(side), parse_number(price),
                             res.to_units(parse_number(qty)), orders.size()});
    } catch (const InvalidInput& e) {
      throw InvalidInput("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return orders;
}

inline void write_orders(std::ostream& out, std::span<const Order> orders, const Resolution& res) {
  for (const Order& o : orders)
    out << to_string(o.side) << ' ' << format_number(o.price) << ' ' << format_number(res.to_quantity(o.quantity)) << ' '
        << o.owner << '\n';
}

inline void write_book(std::ostream& out, const CombinedBook& book, const Resolution& res) {
  write_orders(out, book.supply_side, res);
  write_orders(out, book.demand_side, res);
}

}  // namespace pda
