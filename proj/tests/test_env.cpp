#include <gtest/gtest.h>

#include "pda/env.hpp"
#include "pda/strategies.hpp"

using namespace pda;

namespace {

class Scripted final : public Strategy {
public:
  explicit Scripted(std::function<PlayerAction(const BrokerView&)> f) : f_(std::move(f)) {}
  std::string name() const override { return "scripted"; }
  PlayerAction act(const BrokerView& v) override {
    views.push_back(v);
    return f_(v);
  }
  std::vector<BrokerView> views;

private:
  std::function<PlayerAction(const BrokerView&)> f_;
};

EnvConfig small_config() {
  EnvConfig c;
  c.slots = 6;
  c.seed = 11;
  return c;
}

std::vector<double> costs(const std::vector<SlotResult>& slots, std::size_t b) {
  std::vector<double> out;
  for (const SlotResult& s : slots) out.push_back(s.brokers[b].total_cost());
  return out;
}

std::vector<SlotResult> run(Environment& env, std::vector<Strategy*> strategies, std::size_t slots) {
  std::vector<SlotResult> out;
  for (std::size_t s = 0; s < slots; ++s) out.push_back(env.advance_slot(strategies));
  return out;
}

}  // namespace

TEST(Genco, ConstantCostGivesFlatAsks) {
  GencoConfig g{0.0, 0.0, 20.0, 0.0, 5.0, 50.0};
  std::mt19937_64 rng(1);
  const auto asks = genco_asks(g, Resolution(0.001), 100.0, 0, rng);
  ASSERT_EQ(asks.size(), 10u);
  for (const auto& a : asks) {
    EXPECT_EQ(a.price, 20.0);
    EXPECT_EQ(a.quantity, 5000);
  }
}

TEST(Genco, NoiselessQuadraticIsStrictlyIncreasing) {
  GencoConfig g{0.01, 0.2, 5.0, 0.0, 2.0, 40.0};
  std::mt19937_64 rng(1);
  const Resolution res(0.001);
  const auto asks = genco_asks(g, res, 1000.0, res.to_units(3.0), rng);
  ASSERT_FALSE(asks.empty());
  for (std::size_t i = 1; i < asks.size(); ++i) EXPECT_GT(asks[i].price, asks[i - 1].price);
  // first block ends at 5 MWh
  EXPECT_NEAR(asks[0].price, 0.01 * 25 + 0.2 * 5 + 5.0, 1e-12);
  // last block is the 1 MWh left before capacity
  EXPECT_EQ(asks.back().quantity, res.to_units(1.0));
}

TEST(Genco, NoiseStaysWithinBand) {
  GencoConfig g{0.005, 0.1, 15.0, 0.1, 5.0, 100.0};
  std::mt19937_64 rng(3);
  const auto asks = genco_asks(g, Resolution(1.0), 100.0, 0, rng);
  for (std::size_t i = 0; i < asks.size(); ++i) {
    const double x = 5.0 * static_cast<double>(i + 1);
    const double base = 0.005 * x * x + 0.1 * x + 15.0;
    EXPECT_GE(asks[i].price, 0.9 * base - 1e-9);
    EXPECT_LE(asks[i].price, std::min(100.0, 1.1 * base + 1e-9));
  }
}

TEST(Genco, ExhaustedCapacityGivesNoAsks) {
  GencoConfig g;
  std::mt19937_64 rng(1);
  const Resolution res(0.001);
  EXPECT_TRUE(genco_asks(g, res, 100.0, res.to_units(g.capacity), rng).empty());
}

TEST(Environment, MarketOrdersPayConstantCost) {
  EnvConfig c = small_config();
  c.genco = GencoConfig{0.0, 0.0, 12.5, 0.0, 1.0, 500.0};
  Environment env(c, 1);
  MarketOrderStrategy mo;
  const auto slots = run(env, {&mo}, 4);
  const Resolution res(c.resolution);
  for (const SlotResult& s : slots) {
    const double demand = res.to_quantity(s.brokers[0].demand);
    EXPECT_EQ(s.brokers[0].cleared, s.brokers[0].demand);
    EXPECT_NEAR(s.brokers[0].payment, 12.5 * demand, 1e-9);
    EXPECT_EQ(s.brokers[0].balancing, 0.0);
  }
}

TEST(Environment, IdleBrokerPaysBalancing) {
  EnvConfig c = small_config();
  Environment env(c, 1);
  IdleStrategy idle;
  const Resolution res(c.resolution);
  for (const SlotResult& s : run(env, {&idle}, 3))
    EXPECT_DOUBLE_EQ(s.brokers[0].total_cost(), c.balancing_price * res.to_quantity(s.brokers[0].demand));
}

TEST(Environment, SwappingIdenticalBrokersSwapsCosts) {
  EnvConfig c = small_config();
  Environment a(c, 2), b(c, 2);
  ZiStrategy a1({0, 100}, 5), a2({0, 100}, 6), b1({0, 100}, 6), b2({0, 100}, 5);
  const auto ra = run(a, {&a1, &a2}, 5);
  const auto rb = run(b, {&b1, &b2}, 5);
  EXPECT_EQ(costs(ra, 0), costs(rb, 1));
  EXPECT_EQ(costs(ra, 1), costs(rb, 0));
}

TEST(Environment, Reproducible) {
  EnvConfig c = small_config();
  c.miso.enabled = true;
  Environment a(c, 2), b(c, 2);
  MpneBbsStrategy a1({}, 9), b1({}, 9);
  ZiStrategy a2({0, 100}, 4), b2({0, 100}, 4);
  const auto ra = run(a, {&a1, &a2}, 4);
  const auto rb = run(b, {&b1, &b2}, 4);
  for (std::size_t k = 0; k < 2; ++k) EXPECT_EQ(costs(ra, k), costs(rb, k));
}

TEST(Environment, UnitCostNeverExceedsBalancing) {
  for (DemandLevel level : {DemandLevel::Low, DemandLevel::Extreme}) {
    EnvConfig c = small_config();
    c.level = level;
    c.miso.enabled = true;
    Environment env(c, 3);
    ZiStrategy zi({0, 100}, 1);
    ZipStrategy zip({});
    MarketOrderStrategy mo;
    const Resolution res(c.resolution);
    for (const SlotResult& s : run(env, {&zi, &zip, &mo}, 6))
      for (const auto& b : s.brokers) EXPECT_LE(b.total_cost(), c.balancing_price * res.to_quantity(b.demand) + 1e-9);
  }
}

// Per-slot prices carry independent GenCo noise, so the comparison is on
// the mean round-1 price over a day of slots.
TEST(Environment, MisoRaisesFirstRoundPrices) {
  for (DemandLevel level : {DemandLevel::Low, DemandLevel::Mid, DemandLevel::High, DemandLevel::Extreme}) {
    EnvConfig off = small_config();
    off.level = level;
    EnvConfig on = off;
    on.miso.enabled = true;
    Environment e_off(off, 2), e_on(on, 2);
    MarketOrderStrategy m1, m2, m3, m4;
    const auto r_off = run(e_off, {&m1, &m2}, 24);
    const auto r_on = run(e_on, {&m3, &m4}, 24);
    double sum_off = 0, sum_on = 0;
    for (std::size_t s = 0; s < 24; ++s) {
      ASSERT_TRUE(r_off[s].rounds[0].clearing_price && r_on[s].rounds[0].clearing_price);
      sum_off += *r_off[s].rounds[0].clearing_price;
      sum_on += *r_on[s].rounds[0].clearing_price;
    }
    EXPECT_GT(sum_on, sum_off) << to_string(level);
  }
}

TEST(Environment, MisoResellsOvershootLater) {
  EnvConfig c = small_config();
  c.miso.enabled = true;
  Environment env(c, 1);
  // waits until round 2, then bids low enough that only MISO's resale is below it
  Scripted late([](const BrokerView& v) {
    return v.round() >= 2 ? PlayerAction{{Bid{5.0, v.remaining_requirement()}}, {}} : PlayerAction{};
  });
  const auto slot = env.advance_slot(std::vector<Strategy*>{&late});
  Qty sold = 0;
  for (const RoundLog& r : slot.rounds) sold += r.miso_sold;
  EXPECT_GT(slot.rounds[0].miso_bought, 0);
  EXPECT_GT(sold, 0);
  EXPECT_EQ(slot.rounds[0].miso_sold, 0);
  EXPECT_EQ(slot.brokers[0].cleared, slot.brokers[0].demand);
  // market sells take the marginal bid's price
  EXPECT_NEAR(slot.brokers[0].payment, 5.0 * Resolution(c.resolution).to_quantity(slot.brokers[0].demand), 1e-9);
}

TEST(Environment, ClipsOversizedBidsWithWarning) {
  EnvConfig c = small_config();
  Environment env(c, 1);
  Scripted greedy([](const BrokerView& v) {
    return PlayerAction{{Bid{150.0, v.remaining_requirement() * 3 + 1}}, {Bid{10.0, 5}}};
  });
  const SlotResult r = env.advance_slot(std::vector<Strategy*>{&greedy});
  EXPECT_EQ(r.brokers[0].cleared, r.brokers[0].demand);
  EXPECT_FALSE(r.warnings.empty());
  EXPECT_LE(r.brokers[0].payment, c.p_max * Resolution(c.resolution).to_quantity(r.brokers[0].demand) + 1e-9);
}

TEST(BrokerView, ShowsOnlyOwnFillAndAnonymousOrders) {
  EnvConfig c = small_config();
  Environment env(c, 2);
  Scripted watcher([](const BrokerView& v) {
    return v.round() == 2 ? PlayerAction{{Bid{1.0, v.remaining_requirement()}}, {}} : PlayerAction{};
  });
  MarketOrderStrategy mo;
  const SlotResult r = env.advance_slot(std::vector<Strategy*>{&watcher, &mo});
  ASSERT_EQ(watcher.views.size(), c.rounds_per_slot);
  EXPECT_FALSE(watcher.views[0].previous_auction().has_value());
  const auto book = watcher.views[1].previous_auction();
  ASSERT_TRUE(book);
  EXPECT_EQ(book->round, 1u);
  EXPECT_EQ(book->hour, 24u);
  EXPECT_EQ(book->own_cleared, 0);
  EXPECT_EQ(book->net_cleared, r.rounds[0].total_cleared);
  EXPECT_FALSE(book->uncleared_asks.empty());
  // round 3 sees the unmatched bid at 1.0 from round 2, with no owner attached
  const auto later = watcher.views[2].previous_auction();
  ASSERT_TRUE(later);
  ASSERT_EQ(later->uncleared_bids.size(), 1u);
  EXPECT_EQ(later->uncleared_bids[0].price, 1.0);
  EXPECT_EQ(watcher.views[0].hour(), 24u);
  EXPECT_EQ(watcher.views.back().hour(), 1u);
}

TEST(BrokerView, HistoryIsIndexedByHoursAhead) {
  EnvConfig c = small_config();
  Environment env(c, 1);
  MarketOrderStrategy mo;
  Scripted probe([](const BrokerView&) { return PlayerAction{}; });
  const SlotResult first = env.advance_slot(std::vector<Strategy*>{&mo});
  env.advance_slot(std::vector<Strategy*>{&probe});
  const auto h24 = probe.views[0].clearing_history(24);
  ASSERT_EQ(h24.size(), 1u);
  EXPECT_EQ(h24[0], *first.rounds[0].clearing_price);
  EXPECT_TRUE(probe.views[0].clearing_history(1).empty());  // nothing traded in round 24
}

TEST(EnvConfig, JsonRoundTripAndValidation) {
  EnvConfig c;
  c.level = DemandLevel::High;
  c.miso.enabled = true;
  c.genco.sigma = 0.2;
  const EnvConfig back = env_config_from_json(env_config_json(c));
  EXPECT_EQ(env_config_json(back), env_config_json(c));
  EXPECT_THROW(env_config_from_json({{"genco", {{"sigma", 0.7}}}}), InvalidInput);
  EXPECT_THROW(env_config_from_json({{"demand_level", "huge"}}), InvalidInput);
  EXPECT_THROW(env_config_from_json({{"slots", "many"}}), InvalidInput);
}

TEST(EnvConfig, DemandLevelsScaleBaseLoad) {
  EnvConfig c;
  c.daily_profile = {1.0};
  c.base_load = 3.0;
  const Resolution res(c.resolution);
  const double expect[] = {3.0, 6.0, 12.0, 24.0};
  int i = 0;
  for (DemandLevel level : {DemandLevel::Low, DemandLevel::Mid, DemandLevel::High, DemandLevel::Extreme}) {
    c.level = level;
    EXPECT_DOUBLE_EQ(res.to_quantity(Environment(c, 1).broker_demand(0)), expect[i++]);
  }
}
