#pragma once
#include <algorithm>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pda/env.hpp"

namespace pda {

/// MPNE-BBS hyperparameters. Windows scale the estimated bid price: far
/// from delivery [alpha_f, beta_f], within `proximity_threshold` hours
/// [alpha_c, beta_c].
struct StrategyConfig {
  double alpha_f{0.7};
  double beta_f{1.0};
  double alpha_c{0.95};
  double beta_c{1.15};
  std::size_t bids{5};
  std::size_t proximity_threshold{6};
  Price prior_price{30.0};  // used when neither an orderbook nor history exists
  Price epsilon{0.01};

  void validate() const {
    if (!(alpha_f > 0 && alpha_f <= beta_f)) throw InvalidInput("need 0 < alpha_f <= beta_f");
    if (!(alpha_c > 0 && alpha_c <= beta_c)) throw InvalidInput("need 0 < alpha_c <= beta_c");
    if (bids < 1) throw InvalidInput("bids per auction must be at least 1");
    if (!(prior_price >= 0)) throw InvalidInput("prior_price must be non-negative");
  }
};

struct BidEstimate {
  Price price{0.0};
  bool from_history{false};
  bool adequate{false};
  // 1-based ask indices; zero when the estimate came from history.
  std::size_t u{0};
  std::size_t v_b{0};
  std::size_t v0{0};
};

namespace detail {

// Least 1-based index whose cumulative quantity reaches `target`.
inline std::size_t covering_index(std::span<const SupplyOffer> asks, Qty target) {
  Qty cum = 0;
  for (std::size_t i = 0; i < asks.size(); ++i) {
    cum += asks[i].quantity;
    if (cum >= target) return i + 1;
  }
  return asks.size();
}

}  // namespace detail

/// Estimated bid price from the previous auction's uncleared asks (sorted by
/// price) and demand forecasts. Falls back to the highest historical price at
/// this depth; nullopt when both are empty.
inline std::optional<BidEstimate> estimate_bid_price(std::vector<SupplyOffer> asks, Qty own_demand, Qty market_demand,
                                                     std::size_t hour, std::span<const Price> history) {
  if (asks.empty()) {
    if (history.empty()) return std::nullopt;
    BidEstimate e;
    e.from_history = true;
    e.price = *std::max_element(history.begin(), history.end());
    return e;
  }
  sort_supply_curve(asks);
  Qty supply = 0;
  for (const SupplyOffer& a : asks) supply += a.quantity;
  BidEstimate e;
  e.adequate = supply >= market_demand;
  if (e.adequate) {
    e.u = detail::covering_index(asks, market_demand);
    e.v_b = detail::covering_index(asks, std::max<Qty>(market_demand - own_demand, 0));
    e.v_b = std::max<std::size_t>(e.v_b, 1);
    e.u = std::max<std::size_t>(e.u, 1);
  } else {
    e.u = e.v_b = asks.size();
  }
  const std::ptrdiff_t v0 = static_cast<std::ptrdiff_t>(e.u) - static_cast<std::ptrdiff_t>(hour) + 1;
  e.v0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(1, v0));
  e.price = std::max(asks[e.v0 - 1].price, asks[e.v_b - 1].price);
  return e;
}

class MpneBbsStrategy final : public Strategy {
public:
  MpneBbsStrategy(StrategyConfig cfg, std::uint64_t seed) : cfg_(cfg), rng_(seed) { cfg_.validate(); }

  std::string name() const override { return "mpne-bbs"; }

  PlayerAction act(const BrokerView& view) override {
    PlayerAction action;
    const Qty need = view.remaining_requirement();
    if (need <= 0) return action;
    const std::optional<Orderbook> prev = view.previous_auction();
    std::vector<SupplyOffer> asks = prev ? prev->uncleared_asks : std::vector<SupplyOffer>{};
    const std::vector<Price> history = view.clearing_history(view.hour());
    const std::optional<BidEstimate> est =
        estimate_bid_price(asks, view.own_demand_forecast(), view.market_demand_forecast(), view.hour(), history);
    last_estimate_ = est;
    const Price base = est ? est->price : cfg_.prior_price;
    const bool close = view.hour() <= cfg_.proximity_threshold;
    const double lo = (close ? cfg_.alpha_c : cfg_.alpha_f) * base;
    const double hi = (close ? cfg_.beta_c : cfg_.beta_f) * base;
    std::uniform_real_distribution<double> draw(lo, hi);

    const std::size_t n = static_cast<std::size_t>(std::min<Qty>(need, static_cast<Qty>(cfg_.bids)));
    const Qty share = need / static_cast<Qty>(n);
    Qty extra = need % static_cast<Qty>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const Price p = std::clamp(lo == hi ? lo : draw(rng_), 0.0, view.p_max());
      const Qty q = share + (extra > 0 ? 1 : 0);
      if (extra > 0) --extra;
      action.buys.push_back(Bid{p, q});
    }

    // Brokers holding surplus sell just under the covering ask.
    if (view.remaining_supply() > 0 && est && !est->from_history && !asks.empty()) {
      sort_supply_curve(asks);
      action.sells.push_back(Bid{std::max(0.0, asks[est->u - 1].price - cfg_.epsilon), view.remaining_supply()});
    }
    return action;
  }

  const std::optional<BidEstimate>& last_estimate() const noexcept { return last_estimate_; }

private:
  StrategyConfig cfg_;
  std::mt19937_64 rng_;
  std::optional<BidEstimate> last_estimate_;
};

struct ZiConfig {
  Price low{0.0};
  Price high{100.0};
};

/// Zero intelligence: one bid for the whole requirement at a uniform price.
class ZiStrategy final : public Strategy {
public:
  ZiStrategy(ZiConfig cfg, std::uint64_t seed) : cfg_(cfg), rng_(seed) {
    if (!(cfg_.low >= 0 && cfg_.low <= cfg_.high)) throw InvalidInput("ZI bounds need 0 <= low <= high");
  }

  std::string name() const override { return "zi"; }

  PlayerAction act(const BrokerView& view) override {
    PlayerAction action;
    const Qty need = view.remaining_requirement();
    if (need <= 0) return action;
    std::uniform_real_distribution<double> draw(cfg_.low, cfg_.high);
    action.buys.push_back(Bid{cfg_.low == cfg_.high ? cfg_.low : draw(rng_), need});
    return action;
  }

private:
  ZiConfig cfg_;
  std::mt19937_64 rng_;
};

struct ZipState {
  double margin{0.0};
  double delta{0.05};
  std::optional<Price> last_price;
  std::optional<Price> last_clearing;
};

struct ZipConfig {
  double initial_margin{-0.2};
  double delta{0.05};
  Price prior_price{30.0};
};

/// Zero intelligence plus: price = limit × (1 + m). A buyer whose last bid
/// went unfilled raises m; a filled bid lowers it. The limit is the last
/// clearing price seen at the same depth.
class ZipStrategy final : public Strategy {
public:
  explicit ZipStrategy(ZipConfig cfg) : cfg_(cfg) {
    if (!(cfg_.delta >= 0)) throw InvalidInput("ZIP delta must be non-negative");
    state_.margin = cfg_.initial_margin;
    state_.delta = cfg_.delta;
  }

  std::string name() const override { return "zip"; }
  const ZipState& state() const noexcept { return state_; }

  PlayerAction act(const BrokerView& view) override {
    PlayerAction action;
    const Qty need = view.remaining_requirement();
    const std::optional<Orderbook> prev = view.previous_auction();
    if (prev) {
      state_.last_clearing = prev->clearing_price;
      if (bid_outstanding_) update(prev->own_cleared > 0);
    }
    bid_outstanding_ = false;
    if (need <= 0) return action;

    const std::vector<Price> history = view.clearing_history(view.hour());
    const Price limit = !history.empty() ? history.back() : (state_.last_clearing ? *state_.last_clearing : cfg_.prior_price);
    const Price price = zip_price(limit, view.p_max());
    state_.last_price = price;
    bid_outstanding_ = true;
    action.buys.push_back(Bid{price, need});
    return action;
  }

  /// Applies one margin step and keeps m within [−1, p_max/limit − 1] for the
  /// limit last used.
  void update(bool cleared) {
    state_.margin += cleared ? -state_.delta : state_.delta;
    state_.margin = std::clamp(state_.margin, -1.0, margin_cap_);
  }

  Price zip_price(Price limit, Price p_max) {
    margin_cap_ = limit > 0 ? p_max / limit - 1.0 : std::numeric_limits<double>::infinity();
    state_.margin = std::clamp(state_.margin, -1.0, margin_cap_);
    return std::clamp(limit * (1.0 + state_.margin), 0.0, p_max);
  }

private:
  ZipConfig cfg_;
  ZipState state_;
  double margin_cap_{std::numeric_limits<double>::infinity()};
  bool bid_outstanding_{false};
};

/// Buys the whole remaining requirement at p_max whenever some is left.
class MarketOrderStrategy final : public Strategy {
public:
  std::string name() const override { return "market-order"; }

  PlayerAction act(const BrokerView& view) override {
    PlayerAction action;
    if (view.remaining_requirement() > 0) action.buys.push_back(Bid{view.p_max(), view.remaining_requirement()});
    return action;
  }
};

/// Does nothing; every slot settles at the balancing price.
class IdleStrategy final : public Strategy {
public:
  std::string name() const override { return "idle"; }
  PlayerAction act(const BrokerView&) override { return {}; }
};

inline StrategyConfig strategy_config_from_json(const nlohmann::json& j) {
  StrategyConfig c;
  c.alpha_f = j.value("alpha_f", c.alpha_f);
  c.beta_f = j.value("beta_f", c.beta_f);
  c.alpha_c = j.value("alpha_c", c.alpha_c);
  c.beta_c = j.value("beta_c", c.beta_c);
  c.bids = j.value("bids", c.bids);
  c.proximity_threshold = j.value("proximity_threshold", c.proximity_threshold);
  c.prior_price = j.value("prior_price", c.prior_price);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.validate();
  return c;
}

/// Per-strategy hyperparameters, keyed by registered name.
struct StrategyParams {
  StrategyConfig mpne;
  ZiConfig zi;
  ZipConfig zip;

  static StrategyParams from_json(const nlohmann::json& j, Price p_max) {
    StrategyParams s;
    s.zi.high = p_max;
    try {
      if (j.contains("mpne-bbs")) s.mpne = strategy_config_from_json(j["mpne-bbs"]);
      if (j.contains("zi")) {
        s.zi.low = j["zi"].value("low", s.zi.low);
        s.zi.high = j["zi"].value("high", s.zi.high);
      }
      if (j.contains("zip")) {
        s.zip.initial_margin = j["zip"].value("initial_margin", s.zip.initial_margin);
        s.zip.delta = j["zip"].value("delta", s.zip.delta);
        s.zip.prior_price = j["zip"].value("prior_price", s.zip.prior_price);
      }
    } catch (const nlohmann::json::exception& e) {
      throw InvalidInput(std::string("strategy config: ") + e.what());
    }
    return s;
  }
};

inline const std::vector<std::string>& strategy_names() {
  static const std::vector<std::string> names{"mpne-bbs", "zi", "zip", "market-order", "idle"};
  return names;
}

inline std::unique_ptr<Strategy> make_strategy(const std::string& name, const StrategyParams& params, std::uint64_t seed) {
  if (name == "mpne-bbs") return std::make_unique<MpneBbsStrategy>(params.mpne, seed);
  if (name == "zi") return std::make_unique<ZiStrategy>(params.zi, seed);
  if (name == "zip") return std::make_unique<ZipStrategy>(params.zip);
  if (name == "market-order") return std::make_unique<MarketOrderStrategy>();
  if (name == "idle") return std::make_unique<IdleStrategy>();
  throw InvalidInput("unknown strategy '" + name + "'");
}

}  // namespace pda
