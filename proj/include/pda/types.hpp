#pragma once
#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <system_error>

namespace pda {

// Quantities are integer multiples of the market resolution q_min.
using Qty = std::int64_t;
using Price = double;
using ParticipantId = std::uint32_t;

// Owner 0 is the wholesale supplier; prosumers are 1..N.
inline constexpr ParticipantId kWholesaleSupplier = 0;

enum class Side : std::uint8_t { Buy = 0, SellBid = 1, Ask = 2 };

inline constexpr bool is_supply(Side s) noexcept { return s != Side::Buy; }

inline const char* to_string(Side s) noexcept {
  switch (s) {
    case Side::Buy: return "buy";
    case Side::SellBid: return "sell";
    case Side::Ask: return "ask";
  }
  return "?";
}

struct Order {
  ParticipantId owner{kWholesaleSupplier};
  Side side{Side::Ask};
  Price price{0.0};
  Qty quantity{0};
  std::uint64_t tag{0};

  friend bool operator==(const Order&, const Order&) = default;
};

/// Rejected input: malformed orders, books, configs or actions.
class InvalidInput : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Conversion between real quantities and resolution units.
class Resolution {
public:
  constexpr Resolution() = default;
  explicit Resolution(double unit) : unit_(unit) {
    if (!(unit > 0.0) || !std::isfinite(unit)) throw InvalidInput("resolution must be positive");
  }

  double unit() const noexcept { return unit_; }
  Qty to_units(double quantity) const noexcept { return static_cast<Qty>(std::llround(quantity / unit_)); }
  double to_quantity(Qty units) const noexcept { return static_cast<double>(units) * unit_; }

private:
  double unit_{0.001};
};

// Shortest representation that parses back to the same double.
inline std::string format_number(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc{}) return std::to_string(value);
  return std::string(buf, end);
}

inline double parse_number(std::string_view text) {
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size())
    throw InvalidInput("not a number: '" + std::string(text) + "'");
  return value;
}

}  // namespace pda
