#pragma once
#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pda/clearing.hpp"
#include "pda/game.hpp"

namespace pda {

enum class DemandLevel : std::uint8_t { Low, Mid, High, Extreme };

inline double demand_multiplier(DemandLevel level) {
  switch (level) {
    case DemandLevel::Low: return 1.0;
    case DemandLevel::Mid: return 2.0;
    case DemandLevel::High: return 4.0;
    case DemandLevel::Extreme: return 8.0;
  }
  return 1.0;
}

inline const char* to_string(DemandLevel level) {
  static const char* names[] = {"low", "mid", "high", "extreme"};
  return names[static_cast<int>(level)];
}

inline DemandLevel parse_demand_level(std::string_view s) {
  if (s == "low") return DemandLevel::Low;
  if (s == "mid") return DemandLevel::Mid;
  if (s == "high") return DemandLevel::High;
  if (s == "extreme") return DemandLevel::Extreme;
  throw InvalidInput("unknown demand level '" + std::string(s) + "' (low, mid, high, extreme)");
}

struct GencoConfig {
  double a{0.005};
  double b{0.1};
  double c{15.0};
  double sigma{0.1};     // multiplicative price noise U[1−σ, 1+σ]
  double block{5.0};     // energy per ask
  double capacity{600.0};
};

struct MisoConfig {
  bool enabled{false};
  double multiplier{10.0};  // of the brokers' total demand
  double overshoot{0.1};    // extra bought in round 1, resold later
};

/// PowerTAC-lite settings. Energy is in MWh, prices in currency per MWh.
struct EnvConfig {
  std::size_t rounds_per_slot{24};
  std::size_t slots{168};
  Price p_max{100.0};
  Price balancing_price{200.0};
  double resolution{0.001};
  GencoConfig genco;
  MisoConfig miso;
  DemandLevel level{DemandLevel::Mid};
  double base_load{0.5};
  // Daily shape applied to base_load, indexed by slot hour of day.
  std::vector<double> daily_profile{0.70, 0.65, 0.62, 0.60, 0.62, 0.70, 0.85, 1.00, 1.10, 1.15, 1.18, 1.20,
                                    1.20, 1.18, 1.15, 1.12, 1.15, 1.25, 1.30, 1.25, 1.15, 1.00, 0.85, 0.75};
  double forecast_noise{0.05};
  std::uint64_t seed{1};

  void validate() const {
    if (rounds_per_slot < 1) throw InvalidInput("rounds_per_slot must be at least 1");
    if (slots < 1) throw InvalidInput("slots must be at least 1");
    if (!(p_max > 0)) throw InvalidInput("p_max must be positive");
    if (!(balancing_price > 0)) throw InvalidInput("balancing_price must be positive");
    if (!(genco.sigma >= 0.0 && genco.sigma <= 0.5)) throw InvalidInput("genco.sigma must lie in [0, 0.5]");
    if (!(genco.block > 0) || !(genco.capacity >= 0)) throw InvalidInput("genco block and capacity must be positive");
    if (genco.a < 0 || genco.b < 0 || genco.c < 0) throw InvalidInput("genco coefficients must be non-negative");
    if (miso.multiplier < 0 || miso.overshoot < 0) throw InvalidInput("miso settings must be non-negative");
    if (!(base_load >= 0)) throw InvalidInput("base_load must be non-negative");
    if (daily_profile.empty()) throw InvalidInput("daily_profile must not be empty");
    if (!(forecast_noise >= 0)) throw InvalidInput("forecast_noise must be non-negative");
    Resolution check(resolution);
    (void)check;
  }
};

// Keys mirror the struct fields; every key is optional.
inline EnvConfig env_config_from_json(const nlohmann::json& j) {
  EnvConfig c;
  try {
    c.rounds_per_slot = j.value("rounds_per_slot", c.rounds_per_slot);
    c.slots = j.value("slots", c.slots);
    c.p_max = j.value("p_max", c.p_max);
    c.balancing_price = j.value("balancing_price", c.balancing_price);
    c.resolution = j.value("resolution", c.resolution);
    if (j.contains("genco")) {
      const auto& g = j["genco"];
      c.genco.a = g.value("a", c.genco.a);
      c.genco.b = g.value("b", c.genco.b);
      c.genco.c = g.value("c", c.genco.c);
      c.genco.sigma = g.value("sigma", c.genco.sigma);
      c.genco.block = g.value("block", c.genco.block);
      c.genco.capacity = g.value("capacity", c.genco.capacity);
    }
    if (j.contains("miso")) {
      const auto& m = j["miso"];
      c.miso.enabled = m.value("enabled", c.miso.enabled);
      c.miso.multiplier = m.value("multiplier", c.miso.multiplier);
      c.miso.overshoot = m.value("overshoot", c.miso.overshoot);
    }
    if (j.contains("demand_level")) c.level = parse_demand_level(j["demand_level"].get<std::string>());
    c.base_load = j.value("base_load", c.base_load);
    if (j.contains("daily_profile")) c.daily_profile = j["daily_profile"].get<std::vector<double>>();
    c.forecast_noise = j.value("forecast_noise", c.forecast_noise);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("environment config: ") + e.what());
  }
  c.validate();
  return c;
}

inline nlohmann::json env_config_json(const EnvConfig& c) {
  return {{"rounds_per_slot", c.rounds_per_slot},
          {"slots", c.slots},
          {"p_max", c.p_max},
          {"balancing_price", c.balancing_price},
          {"resolution", c.resolution},
          {"genco",
           {{"a", c.genco.a}, {"b", c.genco.b}, {"c", c.genco.c}, {"sigma", c.genco.sigma}, {"block", c.genco.block},
            {"capacity", c.genco.capacity}}},
          {"miso", {{"enabled", c.miso.enabled}, {"multiplier", c.miso.multiplier}, {"overshoot", c.miso.overshoot}}},
          {"demand_level", to_string(c.level)},
          {"base_load", c.base_load},
          {"daily_profile", c.daily_profile},
          {"forecast_noise", c.forecast_noise},
          {"seed", c.seed}};
}

/// Block asks along the quadratic cost curve, starting after `sold` units.
/// Base prices a·q² + b·q + c are taken at the end of each block, scaled by
/// independent noise and truncated to [0, p_max].
inline std::vector<SupplyOffer> genco_asks(const GencoConfig& g, const Resolution& res, Price p_max, Qty sold,
                                           std::mt19937_64& rng) {
  std::vector<SupplyOffer> asks;
  const Qty capacity = res.to_units(g.capacity);
  const Qty block = std::max<Qty>(1, res.to_units(g.block));
  std::uniform_real_distribution<double> noise(1.0 - g.sigma, 1.0 + g.sigma);
  for (Qty start = sold; start < capacity; start += block) {
    const Qty q = std::min(block, capacity - start);
    const double x = res.to_quantity(start + q);
    const double base = g.a * x * x + g.b * x + g.c;
    const double price = std::clamp(base * noise(rng), 0.0, p_max);
    asks.push_back(SupplyOffer{price, q});
  }
  return asks;
}

/// Public record of one finished auction. Uncleared orders are anonymous;
/// only the viewing broker's own fill is included.
struct Orderbook {
  std::size_t slot{0};
  std::size_t round{0};
  std::size_t hour{0};  // hours ahead of delivery when the auction ran
  std::vector<SupplyOffer> uncleared_asks;
  std::vector<Bid> uncleared_bids;
  std::optional<Price> clearing_price;
  Qty own_cleared{0};
  Qty net_cleared{0};
};

struct PublicAuction {
  std::vector<SupplyOffer> uncleared_asks;
  std::vector<Bid> uncleared_bids;
  std::optional<Price> clearing_price;
  Qty net_cleared{0};
  std::vector<Qty> cleared_by_broker;
};

class Environment;

/// Detached view contents for driving strategies without an environment.
struct ScriptedView {
  std::size_t slot{0};
  std::size_t round{1};
  std::size_t rounds_per_slot{24};
  Price p_max{100.0};
  Price balancing_price{200.0};
  double resolution{1.0};
  Qty remaining{0};
  Qty own_forecast{0};
  Qty market_forecast{0};
  std::optional<Orderbook> previous;
  std::map<std::size_t, std::vector<Price>> history;  // hours ahead -> prices
};

/// Everything a broker strategy may see.
class BrokerView {
public:
  static BrokerView scripted(ScriptedView s) {
    BrokerView v;
    v.slot_ = s.slot;
    v.round_ = s.round;
    v.rounds_ = s.rounds_per_slot;
    v.hour_ = s.rounds_per_slot - s.round + 1;
    v.p_max_ = s.p_max;
    v.upsilon_ = s.balancing_price;
    v.res_ = Resolution(s.resolution);
    v.remaining_ = s.remaining;
    v.own_forecast_ = s.own_forecast;
    v.market_forecast_ = s.market_forecast;
    v.script_ = std::make_shared<const ScriptedView>(std::move(s));
    return v;
  }

  std::size_t slot() const noexcept { return slot_; }
  std::size_t round() const noexcept { return round_; }
  /// Bidding opportunities left for this slot, including the current one.
  std::size_t hour() const noexcept { return hour_; }
  std::size_t rounds_per_slot() const noexcept { return rounds_; }
  Price p_max() const noexcept { return p_max_; }
  Price balancing_price() const noexcept { return upsilon_; }
  const Resolution& resolution() const noexcept { return res_; }

  Qty remaining_requirement() const noexcept { return remaining_; }
  Qty remaining_supply() const noexcept { return 0; }
  /// Noisy estimate of the broker's own outstanding demand.
  Qty own_demand_forecast() const noexcept { return own_forecast_; }
  /// Noisy estimate of all participants' outstanding demand for this slot.
  Qty market_demand_forecast() const noexcept { return market_forecast_; }

  /// The auction held one round earlier for this slot, if any.
  std::optional<Orderbook> previous_auction() const {
    if (script_) return script_->previous;
    if (round_ <= 1) return std::nullopt;
    return book_at(slot_, round_ - 1);
  }

  /// Clearing prices of earlier slots at the given hours-ahead depth.
  std::vector<Price> clearing_history(std::size_t hour) const;

private:
  friend class Environment;
  Orderbook book_at(std::size_t slot, std::size_t round) const;

  const Environment* env_{nullptr};
  std::size_t broker_{0};
  std::size_t slot_{0}, round_{0}, hour_{0}, rounds_{0};
  Price p_max_{0}, upsilon_{0};
  Resolution res_{};
  Qty remaining_{0}, own_forecast_{0}, market_forecast_{0};
  std::shared_ptr<const ScriptedView> script_;
};

/// Broker bidding strategy. Strategies only ever receive a BrokerView.
class Strategy {
public:
  virtual ~Strategy() = default;
  virtual std::string name() const = 0;
  virtual PlayerAction act(const BrokerView& view) = 0;
};

struct RoundLog {
  std::size_t slot{0};
  std::size_t round{0};
  std::optional<Price> clearing_price;
  Qty total_cleared{0};
  std::vector<Qty> broker_cleared;
  Qty miso_bought{0};
  Qty miso_sold{0};
  std::size_t uncleared_asks{0};
};

struct BrokerSlotResult {
  Qty demand{0};
  Qty cleared{0};
  double payment{0.0};
  double balancing{0.0};

  double total_cost() const { return payment + balancing; }
};

struct SlotResult {
  std::size_t slot{0};
  std::vector<BrokerSlotResult> brokers;
  std::vector<RoundLog> rounds;
  std::vector<std::string> warnings;
};

/// One PowerTAC-lite game: a GenCo, an optional MISO buyer and a set of
/// brokers, each delivery slot traded over `rounds_per_slot` uniform-price
/// auctions before balancing.
class Environment {
public:
  Environment(EnvConfig config, std::size_t brokers) : cfg_(std::move(config)), res_(cfg_.resolution), brokers_(brokers) {
    cfg_.validate();
    if (brokers_ == 0) throw InvalidInput("at least one broker is required");
    std::seed_seq seq{cfg_.seed, std::uint64_t{0x9e3779b97f4a7c15ULL}};
    std::array<std::uint64_t, 2> seeds{};
    seq.generate(seeds.begin(), seeds.end());
    genco_rng_.seed(seeds[0]);
    forecast_rng_.seed(seeds[1]);
  }

  const EnvConfig& config() const noexcept { return cfg_; }
  std::size_t brokers() const noexcept { return brokers_; }
  std::size_t next_slot() const noexcept { return slot_; }
  ParticipantId miso_owner() const noexcept { return static_cast<ParticipantId>(brokers_ + 1); }

  /// Demand of one broker for a delivery slot, in resolution units.
  Qty broker_demand(std::size_t slot) const {
    const double shape = cfg_.daily_profile[slot % cfg_.daily_profile.size()];
    return res_.to_units(cfg_.base_load * demand_multiplier(cfg_.level) * shape);
  }

  SlotResult advance_slot(std::span<Strategy* const> strategies) {
    if (strategies.size() != brokers_) throw InvalidInput("strategy count does not match broker count");
    const std::size_t slot = slot_++;
    SlotResult result;
    result.slot = slot;
    const Qty demand = broker_demand(slot);
    std::vector<Qty> remaining(brokers_, demand);
    result.brokers.assign(brokers_, BrokerSlotResult{demand, 0, 0.0, 0.0});

    const Qty miso_demand =
        cfg_.miso.enabled ? res_.to_units(cfg_.miso.multiplier * res_.to_quantity(demand) * static_cast<double>(brokers_)) : 0;
    Qty miso_excess = 0;
    Qty genco_sold = 0;
    auctions_.emplace_back();
    auto& slot_auctions = auctions_.back();

    for (std::size_t round = 1; round <= cfg_.rounds_per_slot; ++round) {
      const std::size_t hour = cfg_.rounds_per_slot - round + 1;
      std::vector<Order> orders;
      for (const SupplyOffer& a : genco_asks(cfg_.genco, res_, cfg_.p_max, genco_sold, genco_rng_))
        orders.push_back(Order{kWholesaleSupplier, Side::Ask, a.price, a.quantity, 0});
      if (miso_demand > 0 && round == 1) {
        const Qty q = res_.to_units(res_.to_quantity(miso_demand) * (1.0 + cfg_.miso.overshoot));
        if (q > 0) orders.push_back(Order{miso_owner(), Side::Buy, cfg_.p_max, q, 0});
      } else if (miso_excess > 0) {
        const Qty chunk = (miso_excess + static_cast<Qty>(hour) - 1) / static_cast<Qty>(hour);
        orders.push_back(Order{miso_owner(), Side::SellBid, 0.0, chunk, 0});
      }

      Qty market_remaining = miso_excess > 0 ? 0 : (round == 1 ? miso_demand : 0);
      for (Qty r : remaining) market_remaining += r;
      for (std::size_t b = 0; b < brokers_; ++b) {
        BrokerView view = make_view(b, slot, round, hour, remaining[b], market_remaining);
        PlayerAction action = strategies[b]->act(view);
        append_broker_orders(b, action, remaining[b], orders, result.warnings, slot, round);
      }

      const CombinedBook book = normalize_book(orders, BookLimits{cfg_.p_max, cfg_.p_max, std::numeric_limits<Qty>::max()});
      const ClearingOutcome out = clear(book, acpr());
      const std::optional<Price> lambda = market_order_price(out);

      RoundLog log;
      log.slot = slot;
      log.round = round;
      log.clearing_price = lambda;
      log.total_cleared = out.total_cleared;
      log.broker_cleared.assign(brokers_, 0);
      PublicAuction pub;
      pub.clearing_price = lambda;
      pub.net_cleared = out.total_cleared;
      for (const Fill& f : out.fills) {
        const Qty left = f.order.quantity - f.cleared;
        if (is_supply(f.order.side) && left > 0) pub.uncleared_asks.push_back(SupplyOffer{f.order.price, left});
        if (f.order.side == Side::Buy && left > 0) pub.uncleared_bids.push_back(Bid{f.order.price, left});
        if (f.cleared == 0) continue;
        const double amount = lambda.value() * res_.to_quantity(f.cleared);
        if (f.order.owner == kWholesaleSupplier) {
          genco_sold += f.cleared;
        } else if (f.order.owner == miso_owner()) {
          if (f.order.side == Side::Buy) {
            log.miso_bought += f.cleared;
            miso_excess += std::max<Qty>(0, f.cleared - miso_demand);
          } else {
            log.miso_sold += f.cleared;
            miso_excess -= f.cleared;
          }
        } else {
          const std::size_t b = f.order.owner - 1;
          remaining[b] -= f.cleared;
          log.broker_cleared[b] += f.cleared;
          result.brokers[b].cleared += f.cleared;
          result.brokers[b].payment += amount;
        }
      }
      sort_supply_curve(pub.uncleared_asks);
      std::stable_sort(pub.uncleared_bids.begin(), pub.uncleared_bids.end(),
                       [](const Bid& a, const Bid& b) { return a.price > b.price; });
      pub.cleared_by_broker = log.broker_cleared;
      log.uncleared_asks = pub.uncleared_asks.size();
      slot_auctions.push_back(std::move(pub));
      result.rounds.push_back(std::move(log));
    }
    for (std::size_t b = 0; b < brokers_; ++b)
      result.brokers[b].balancing = cfg_.balancing_price * res_.to_quantity(remaining[b]);
    return result;
  }

private:
  friend class BrokerView;

  // A buy at p_max or a sell at 0 is a market order and carries no price of
  // its own: when it is marginal, the other side's marginal price is used.
  std::optional<Price> market_order_price(const ClearingOutcome& out) const {
    if (out.degenerate) return std::nullopt;
    MarginalPair m = *out.marginal;
    const bool bid_market = m.last_cleared_bid >= cfg_.p_max;
    const bool ask_market = m.last_cleared_ask <= 0.0;
    if (bid_market && !ask_market) m.last_cleared_bid = m.last_cleared_ask;
    if (ask_market && !bid_market) m.last_cleared_ask = m.last_cleared_bid;
    return price_of(m, acpr());
  }

  Qty noisy(Qty truth) {
    if (cfg_.forecast_noise <= 0.0 || truth <= 0) return truth;
    std::normal_distribution<double> n(0.0, cfg_.forecast_noise);
    const double f = static_cast<double>(truth) * (1.0 + n(forecast_rng_));
    return std::max<Qty>(0, static_cast<Qty>(std::llround(f)));
  }

  BrokerView make_view(std::size_t b, std::size_t slot, std::size_t round, std::size_t hour, Qty remaining,
                       Qty market_remaining) {
    BrokerView v;
    v.env_ = this;
    v.broker_ = b;
    v.slot_ = slot;
    v.round_ = round;
    v.hour_ = hour;
    v.rounds_ = cfg_.rounds_per_slot;
    v.p_max_ = cfg_.p_max;
    v.upsilon_ = cfg_.balancing_price;
    v.res_ = res_;
    v.remaining_ = remaining;
    v.own_forecast_ = noisy(remaining);
    v.market_forecast_ = noisy(market_remaining);
    return v;
  }

  // Lenient exchange: bids beyond the remaining requirement are cut back,
  // sells from brokers without supply are dropped, prices are clipped.
  void append_broker_orders(std::size_t b, const PlayerAction& action, Qty remaining, std::vector<Order>& orders,
                            std::vector<std::string>& warnings, std::size_t slot, std::size_t round) const {
    const std::string where = "slot " + std::to_string(slot) + " round " + std::to_string(round) + " broker " +
                              std::to_string(b + 1) + ": ";
    Qty budget = remaining;
    for (const Bid& bid : action.buys) {
      if (bid.quantity <= 0) continue;
      Qty q = bid.quantity;
      if (q > budget) {
        warnings.push_back(where + "buy quantity clipped to remaining requirement");
        q = budget;
      }
      if (q <= 0) continue;
      Price p = bid.price;
      if (!(p >= 0.0 && p <= cfg_.p_max)) {
        warnings.push_back(where + "buy price clipped to [0, p_max]");
        p = std::isnan(p) ? 0.0 : std::clamp(p, 0.0, cfg_.p_max);
      }
      orders.push_back(Order{static_cast<ParticipantId>(b + 1), Side::Buy, p, q, 0});
      budget -= q;
    }
    if (!action.sells.empty()) warnings.push_back(where + "sell bids dropped: broker holds no supply");
  }

  EnvConfig cfg_;
  Resolution res_;
  std::size_t brokers_;
  std::size_t slot_{0};
  std::mt19937_64 genco_rng_;
  std::mt19937_64 forecast_rng_;
  std::vector<std::vector<PublicAuction>> auctions_;  // [slot][round − 1]
};

inline Orderbook BrokerView::book_at(std::size_t slot, std::size_t round) const {
  const PublicAuction& a = env_->auctions_.at(slot).at(round - 1);
  Orderbook ob;
  ob.slot = slot;
  ob.round = round;
  ob.hour = rounds_ - round + 1;
  ob.uncleared_asks = a.uncleared_asks;
  ob.uncleared_bids = a.uncleared_bids;
  ob.clearing_price = a.clearing_price;
  ob.own_cleared = a.cleared_by_broker.at(broker_);
  ob.net_cleared = a.net_cleared;
  return ob;
}

inline std::vector<Price> BrokerView::clearing_history(std::size_t hour) const {
  std::vector<Price> prices;
  if (script_) {
    auto it = script_->history.find(hour);
    return it == script_->history.end() ? prices : it->second;
  }
  if (hour < 1 || hour > rounds_) return prices;
  const std::size_t round = rounds_ - hour + 1;
  for (std::size_t s = 0; s < slot_ && s < env_->auctions_.size(); ++s) {
    const auto& slot_auctions = env_->auctions_[s];
    if (round - 1 < slot_auctions.size() && slot_auctions[round - 1].clearing_price)
      prices.push_back(*slot_auctions[round - 1].clearing_price);
  }
  return prices;
}

/// JSON-lines game log record, same conventions as trajectory records.
inline nlohmann::json round_log_json(const RoundLog& r, const Resolution& res, std::size_t game) {
  auto cleared = nlohmann::json::array();
  for (Qty q : r.broker_cleared) cleared.push_back(res.to_quantity(q));
  return {{"schema", "pda.envlog/1"},
          {"game", game},
          {"slot", r.slot},
          {"round", r.round},
          {"lambda", r.clearing_price ? nlohmann::json(*r.clearing_price) : nlohmann::json(nullptr)},
          {"total_cleared", res.to_quantity(r.total_cleared)},
          {"broker_cleared", std::move(cleared)},
          {"miso_bought", res.to_quantity(r.miso_bought)},
          {"miso_sold", res.to_quantity(r.miso_sold)},
          {"uncleared_asks", r.uncleared_asks}};
}

}  // namespace pda
