// Acceptance run: one PASS/FAIL line per criterion, informational lines
// indented below. Exit status is 1 if any criterion fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>

#include "pda/harness.hpp"
#include "pda/kkt.hpp"
#include "support/books.hpp"
#include "support/brute_force_clear.hpp"

using namespace pda;

namespace {

int failures = 0;

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); }
};

void verdict(int id, bool pass, const std::string& what, double seconds, double budget) {
  const bool in_time = seconds <= budget;
  if (!pass || !in_time) ++failures;
  std::printf("C%-2d %s  %s  [%.1fs, budget %.0fs%s]\n", id, pass && in_time ? "PASS" : "FAIL", what.c_str(), seconds, budget,
              in_time ? "" : ", over budget");
  std::fflush(stdout);
}

void info(const std::string& line) {
  std::printf("      %s\n", line.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Random books: C1 and C3 share them.
std::vector<CombinedBook> make_books(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<CombinedBook> books;
  books.reserve(n);
  for (std::size_t i = 0; i < n; ++i) books.push_back(normalize_book(oracle::random_orders(rng, 50)));
  return books;
}

PricingRule rule_for(std::size_t i) {
  switch (i % 5) {
    case 0: return acpr();
    case 1: return KDouble{0.0};
    case 2: return KDouble{0.25 + 0.5 * static_cast<double>((i / 5) % 3) / 2.0};
    case 3: return MeritOrderDual{DualPick::LowerAsk};
    default: return MeritOrderDual{static_cast<DualPick>((i / 5) % 3)};
  }
}

void criterion_1(const std::vector<CombinedBook>& books) {
  Timer t;
  std::size_t mismatches = 0, property_failures = 0, guarded = 0;
  std::string first;
  for (std::size_t i = 0; i < books.size(); ++i) {
    const PricingRule rule = rule_for(i);
    const ClearingOutcome out = clear(books[i], rule);
    if (!(out == oracle::brute_force_clear(books[i], rule))) {
      if (mismatches++ == 0) first = fmt("book %zu differs from oracle", i);
    }
    const std::string bad = oracle::check_clearing_properties(books[i], out, rule);
    if (!bad.empty() && property_failures++ == 0 && first.empty()) first = fmt("book %zu: %s", i, bad.c_str());
    if (self_match_owner(books[i])) ++guarded;
  }
  verdict(1, mismatches == 0 && property_failures == 0,
          fmt("clearing conformance: %zu books, %zu oracle mismatches, %zu property failures", books.size(), mismatches,
              property_failures),
          t.seconds(), 60);
  info(fmt("%zu books with a single-prosumer supply side exercised the self-match guard", guarded));
  if (!first.empty()) info(first);
}

// Independent surplus optimum: greedy merit order over the eligible orders.
double merit_order_surplus(const CombinedBook& book, const ClearingOutcome& out) {
  std::vector<std::pair<Price, Qty>> asks, bids;
  for (const Order& o : book.supply_side) asks.emplace_back(o.price, o.quantity);
  for (const Order& o : book.demand_side)
    if (!out.fills[o.tag].excluded) bids.emplace_back(o.price, o.quantity);
  std::sort(asks.begin(), asks.end());
  std::sort(bids.begin(), bids.end(), [](auto& a, auto& b) { return a.first > b.first; });
  double surplus = 0.0;
  std::size_t i = 0, j = 0;
  while (i < asks.size() && j < bids.size() && bids[j].first >= asks[i].first) {
    const Qty q = std::min(asks[i].second, bids[j].second);
    surplus += static_cast<double>(q) * (bids[j].first - asks[i].first);
    if ((asks[i].second -= q) == 0) ++i;
    if ((bids[j].second -= q) == 0) ++j;
  }
  return surplus;
}

void criterion_2() {
  Timer t;
  std::mt19937_64 rng(2024);
  std::size_t certified = 0, invalid = 0, suboptimal = 0, instances = 0;
  double worst = 0.0;
  while (instances < 1000) {
    const CombinedBook book = normalize_book(oracle::random_orders(rng, 50));
    bool counted = false;
    for (const PricingRule& rule : {PricingRule{acpr()}, PricingRule{KDouble{0.3}}, PricingRule{MeritOrderDual{}}}) {
      const ClearingOutcome out = clear(book, rule);
      if (out.degenerate) continue;
      counted = true;
      const KktCertificate cert = certify_kkt(book, out, 1e-6);
      worst = std::max(worst, cert.residuals.max());
      ++certified;
      if (!cert.valid()) ++invalid;
      double achieved = 0.0;
      for (const Fill& f : out.fills)
        achieved += static_cast<double>(f.cleared) * (is_supply(f.order.side) ? -f.order.price : f.order.price);
      if (std::abs(achieved - merit_order_surplus(book, out)) > 1e-6) ++suboptimal;
    }
    if (counted) ++instances;
  }
  verdict(2, invalid == 0 && suboptimal == 0,
          fmt("KKT certification: %zu instances, %zu clearings, %zu invalid certificates, max residual %.2e", instances,
              certified, invalid, worst),
          t.seconds(), 30);
  info(fmt("cleared surplus below the merit-order optimum: %zu", suboptimal));
}

void criterion_3(const std::vector<CombinedBook>& books) {
  Timer t;
  std::size_t checked = 0, wrong = 0;
  for (const CombinedBook& book : books) {
    const ClearingOutcome out = clear(book, KDouble{0.5});
    if (out.degenerate) continue;
    ++checked;
    if (out.clearing_price != (out.last_cleared_ask_price() + out.last_cleared_bid_price()) / 2.0) ++wrong;
  }
  verdict(3, wrong == 0, fmt("ACPR identity: %zu non-degenerate clearings, %zu differ from the midpoint", checked, wrong),
          t.seconds(), 60);
}

std::vector<Instance> lemma_instances() {
  std::vector<Instance> out;
  for (std::uint64_t seed = 0; out.size() < 200; ++seed) {
    InstanceSpec spec;
    spec.players = 1 + seed % 3;
    spec.horizon = 1 + (seed / 3) % 3;
    spec.adequate = true;
    spec.prosumers = true;
    out.push_back(generate_instance(90'000 + seed, spec));
  }
  return out;
}

struct Values {
  std::vector<double> closed, rolled;
  double slack;
};

std::vector<Values> criteria_4_5(const std::vector<Instance>& instances) {
  Timer t;
  std::size_t rounds = 0, mismatch = 0, unsold = 0;
  std::size_t pairs = 0, increasing = 0, decreasing = 0, lambda_checked = 0;
  std::size_t trajectories_with_rise = 0;
  std::string first;
  std::vector<Values> values;
  for (std::size_t k = 0; k < instances.size(); ++k) {
    const Instance& inst = instances[k];
    const GameConfig c = inst.config();
    MarketState s = inst.state;
    std::vector<Qty> sold(s.players(), 0);
    std::vector<std::optional<Price>> lambdas;
    while (s.round <= c.horizon()) {
      const PredictedClearing p = predict_clearing(s, c);
      const StepResult r = step(s, mpne_joint_action(s, c), c);
      ++rounds;
      bool ok = p.total == r.outcome.total_cleared && p.residual_asks == r.next.supply_curve;
      if (p.total > 0) ok = ok && p.lambda == r.outcome.clearing_price;
      for (std::size_t b = 0; b < s.players(); ++b) {
        ok = ok && p.bought[b] == r.outcome.bought_by(owner_of(b)) && p.sold[b] == r.outcome.sold_by(owner_of(b));
        sold[b] += r.outcome.sold_by(owner_of(b));
      }
      if (!ok && mismatch++ == 0) first = fmt("instance %zu round %zu", k, s.round);
      lambdas.push_back(r.outcome.degenerate ? std::nullopt : std::optional<Price>(r.outcome.clearing_price));
      s = r.next;
    }
    for (std::size_t b = 0; b < sold.size(); ++b)
      if (sold[b] != inst.state.prosumer_supply[b]) ++unsold;
    bool rose = false;
    for (std::size_t h = 0; h + 1 < lambdas.size(); ++h) {
      if (!lambdas[h] || !lambdas[h + 1]) continue;
      ++pairs;
      if (*lambdas[h] < *lambdas[h + 1]) ++increasing, rose = true;
      if (*lambdas[h] > *lambdas[h + 1]) ++decreasing;
    }
    lambda_checked += lambdas.size();
    if (rose) ++trajectories_with_rise;
    values.push_back({mpne_values(inst.state, c), evaluate_value(mpne_profile(inst.state.players()), inst.state, c),
                      default_slack(inst.state, c)});
  }
  const double elapsed = t.seconds();
  verdict(4, mismatch == 0 && unsold == 0,
          fmt("closed-form clearing: %zu instances, %zu rounds, %zu per-player mismatches, %zu prosumers with unsold supply",
              instances.size(), rounds, mismatch, unsold),
          elapsed, 120);
  if (!first.empty()) info("first mismatch: " + first);

  verdict(5, increasing == 0,
          fmt("clearing price non-increasing over rounds: %zu consecutive pairs, %zu exceptions (price rose)", pairs,
              increasing),
          0.0, 120);
  info(fmt("%zu of %zu trajectories have a rising price; pairs with a falling price: %zu", trajectories_with_rise,
           instances.size(), decreasing));
  info(fmt("reverse direction (price never falls): %s", decreasing == 0 ? "holds on every pair" : "does not hold"));
  return values;
}

void criterion_7(const std::vector<Values>& values) {
  Timer t7;
  double worst = 0.0;
  std::size_t over = 0;
  for (const Values& v : values)
    for (std::size_t b = 0; b < v.closed.size(); ++b) {
      const double gap = std::abs(v.closed[b] - v.rolled[b]);
      worst = std::max(worst, gap);
      if (gap > v.slack) ++over;
    }
  verdict(7, over == 0, fmt("closed-form value: %zu players over slack, max |gap| %.3g", over, worst), t7.seconds(), 60);

}

void criterion_6() {
  Timer t;
  EquilibriumSuiteSpec spec;
  spec.adequate = 100;
  spec.inadequate = 100;
  spec.premise_violated = 20;
  spec.instance.players = 2;
  spec.instance.horizon = 2;
  spec.instance.prosumers = true;
  spec.grid.density = 12;
  spec.seed = 600;
  const SuiteResult r = run_equilibrium_suite(spec);
  const double elapsed = t.seconds();
  verdict(6, r.passed(),
          fmt("Nash verification: adequate %zu/%zu checks violate, inadequate %zu/%zu, slack %.4g", r.adequate.violations,
              r.adequate.checks, r.inadequate.violations, r.inadequate.checks, r.adequate.slack),
          elapsed, 600);
  info(fmt("grid: %zu prices per side, up to %zu actions per state", r.adequate.grid_density,
           std::max(r.adequate.max_actions_per_state, r.inadequate.max_actions_per_state)));
  info(fmt("max margin: adequate %.4g, inadequate %.4g; beyond-phi max margin %.4g", r.adequate.max_margin,
           r.inadequate.max_margin, r.inadequate.max_beyond_phi_margin));
  info(fmt("premise-violated batch (excluded): %zu instances, %zu/%zu checks violate", r.premise_instances,
           r.premise_violated.violations, r.premise_violated.checks));
  if (r.adequate.worst && r.adequate.worst->margin > r.adequate.slack) {
    const DeviationCheck& w = *r.adequate.worst;
    auto list = [](const std::vector<Bid>& bids) {
      std::string out;
      for (const Bid& b : bids) out += fmt(" (%.4g,%lld)", b.price, static_cast<long long>(b.quantity));
      return out.empty() ? std::string(" none") : out;
    };
    info(fmt("worst adequate: round %zu player %zu deviates to buys%s sells%s, value %.4g vs equilibrium %.4g", w.round,
             w.player + 1, list(w.deviation.buys).c_str(), list(w.deviation.sells).c_str(), w.deviation_value,
             w.mpne_value));
  }
  // Same suite without prosumers, for contrast.
  spec.instance.prosumers = false;
  spec.premise_violated = 0;
  const SuiteResult plain = run_equilibrium_suite(spec);
  info(fmt("without prosumers: adequate %zu/%zu violate, inadequate %zu/%zu", plain.adequate.violations,
           plain.adequate.checks, plain.inadequate.violations, plain.inadequate.checks));
}

void criterion_8() {
  Timer t;
  struct Case {
    std::vector<SupplyOffer> asks;
    Qty own, market;
    std::size_t hour;
    std::vector<Price> history;
    Price expected;
  };
  // Traced by hand: cumulative ask quantities, u, v^b, v^0, max of prices.
  const std::vector<Case> cases{
      {{{10, 5}, {20, 5}, {30, 5}}, 4, 8, 23, {}, 10},   // u=2, v^b=1, v0=1
      {{{10, 5}, {20, 5}, {30, 5}}, 4, 8, 1, {}, 20},    // v0=2
      {{}, 4, 8, 7, {18, 22}, 22},                       // history maximum
      {{{10, 5}, {20, 5}, {30, 5}}, 4, 20, 12, {}, 30},  // short supply: last ask
      {{{10, 5}, {20, 5}, {30, 5}}, 2, 14, 2, {}, 30},   // u=3, v^b=3, v0=2
      {{{12, 2}, {15, 2}, {18, 2}, {40, 9}}, 3, 6, 2, {}, 15},  // u=3, v^b=2, v0=2
      {{{12, 2}, {15, 2}, {18, 2}, {40, 9}}, 3, 6, 1, {}, 18},  // v0=3
  };
  std::size_t wrong = 0;
  for (const Case& c : cases) {
    const auto e = estimate_bid_price(c.asks, c.own, c.market, c.hour, c.history);
    if (!e || e->price != c.expected) ++wrong;
  }
  // Pinned windows turn the strategy into its estimate; check the bid list too.
  StrategyConfig pinned;
  pinned.alpha_f = pinned.beta_f = pinned.alpha_c = pinned.beta_c = 1.0;
  std::size_t bad_lists = 0;
  for (std::size_t hour : {23u, 1u}) {
    ScriptedView v;
    v.round = 25 - hour;
    v.remaining = 12;
    v.own_forecast = 4;
    v.market_forecast = 8;
    v.previous = Orderbook{};
    v.previous->uncleared_asks = {{10, 5}, {20, 5}, {30, 5}};
    MpneBbsStrategy s(pinned, 1);
    const PlayerAction a = s.act(BrokerView::scripted(v));
    const Price want = hour == 23 ? 10.0 : 20.0;
    bool ok = a.buys.size() == 5 && a.buy_quantity() == 12;
    for (const Bid& b : a.buys) ok = ok && b.price == want && (b.quantity == 2 || b.quantity == 3);
    if (!ok) ++bad_lists;
  }
  verdict(8, wrong == 0 && bad_lists == 0,
          fmt("bid price estimation: %zu fixtures, %zu wrong; bid lists %zu wrong", cases.size(), wrong, bad_lists),
          t.seconds(), 10);
}

void criterion_9() {
  Timer t;
  std::size_t beat_market = 0, beat_zi = 0, configs = 0;
  for (DemandLevel level : {DemandLevel::Low, DemandLevel::Mid, DemandLevel::High, DemandLevel::Extreme})
    for (bool miso : {false, true}) {
      ++configs;
      double mpne[2], other[2];
      int k = 0;
      for (const char* opponent : {"market-order", "zi"}) {
        ExperimentSpec spec;
        spec.mode = ExperimentMode::Pairwise;
        spec.games = 10;
        spec.base_seed = 1000 + 10 * static_cast<std::uint64_t>(level) + (miso ? 5 : 0);
        spec.strategies = {"mpne-bbs", opponent};
        spec.env.level = level;
        spec.env.miso.enabled = miso;
        const CostTable table = run_experiment(spec).table;
        mpne[k] = table.row("mpne-bbs")->mean;
        other[k] = table.row(opponent)->mean;
        ++k;
      }
      if (mpne[0] <= other[0]) ++beat_market;
      if (mpne[1] <= other[1]) ++beat_zi;
      info(fmt("%-7s miso %-3s  mpne-bbs %.3f vs market-order %.3f (x%.3f) | mpne-bbs %.3f vs zi %.3f (x%.3f)",
               to_string(level), miso ? "on" : "off", mpne[0], other[0], other[0] / mpne[0], mpne[1], other[1],
               other[1] / mpne[1]));
    }
  verdict(9, beat_market == configs && beat_zi + 1 >= configs,
          fmt("tournaments: MPNE-BBS <= market-order in %zu/%zu configurations, <= ZI in %zu/%zu", beat_market, configs,
              beat_zi, configs),
          t.seconds(), 900);
}

void criterion_10() {
  Timer t;
  ExperimentSpec spec;
  spec.mode = ExperimentMode::AllPlayer;
  spec.games = 4;
  spec.base_seed = 77;
  spec.strategies = {"mpne-bbs", "zi", "zip", "market-order"};
  spec.env.level = DemandLevel::High;
  spec.env.miso.enabled = true;
  spec.threads = 1;
  const std::string a = run_experiment(spec).table.csv();
  const std::string b = run_experiment(spec).table.csv();
  spec.threads = 4;
  const std::string c = run_experiment(spec).table.csv();
  verdict(10, a == b && a == c && !a.empty(),
          fmt("determinism: repeated and re-threaded runs give byte-identical CSV (%zu bytes)", a.size()), t.seconds(), 120);
}

}  // namespace

int main() {
  std::printf("acceptance run\n");
  const std::vector<CombinedBook> books = make_books(10'000, 1);
  criterion_1(books);
  criterion_2();
  criterion_3(books);
  const std::vector<Values> values = criteria_4_5(lemma_instances());
  criterion_6();
  criterion_7(values);
  criterion_8();
  criterion_9();
  criterion_10();
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
