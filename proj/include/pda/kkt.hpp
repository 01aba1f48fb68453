#pragma once
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "pda/clearing.hpp"

namespace pda {

struct KktResiduals {
  double stationarity{0.0};
  double primal_feasibility{0.0};
  double balance{0.0};
  double complementary_slackness{0.0};

  double max() const { return std::max({stationarity, primal_feasibility, balance, complementary_slackness}); }
};

/// Dual certificate for the merit-order LP
///   min p·α  s.t.  α ≤ q,  −α ≤ 0,  Γα = 0 : λ
/// where supply entries carry +price and Γ = −1, buy entries −price and Γ = +1.
/// Duals are indexed by order tag.
struct KktCertificate {
  std::vector<double> duals_nu;
  std::vector<double> duals_xi;
  double lambda{0.0};
  KktResiduals residuals;
  double tolerance{1e-6};

  bool valid() const { return residuals.max() <= tolerance; }
};

/// Evaluates the KKT system at a fixed market dual λ. Fully cleared orders get
/// ξ = 0, uncleared orders ν = 0, partially cleared orders ν = ξ = 0; the
/// remaining multiplier absorbs stationarity and any shortfall is reported.
inline KktCertificate certify_kkt_at(const ClearingOutcome& outcome, double lambda, double tolerance = 1e-6) {
  KktCertificate cert;
  cert.lambda = lambda;
  cert.tolerance = tolerance;
  cert.duals_nu.assign(outcome.fills.size(), 0.0);
  cert.duals_xi.assign(outcome.fills.size(), 0.0);
  KktResiduals& r = cert.residuals;
  double buy_total = 0.0, supply_total = 0.0;
  for (std::size_t t = 0; t < outcome.fills.size(); ++t) {
    const Fill& f = outcome.fills[t];
    if (f.excluded) continue;
    const double q = static_cast<double>(f.order.quantity);
    const double a = static_cast<double>(f.cleared);
    const bool supply = is_supply(f.order.side);
    (supply ? supply_total : buy_total) += a;
    // Stationarity requires ν − ξ = required.
    const double required = supply ? lambda - f.order.price : f.order.price - lambda;
    double nu = 0.0, xi = 0.0;
    if (a >= q) {
      nu = std::max(required, 0.0);
    } else if (a <= 0.0) {
      xi = std::max(-required, 0.0);
    }
    cert.duals_nu[t] = nu;
    cert.duals_xi[t] = xi;
    r.stationarity = std::max(r.stationarity, std::abs(required - (nu - xi)));
    r.primal_feasibility = std::max({r.primal_feasibility, a - q, -a});
    r.complementary_slackness = std::max({r.complementary_slackness, std::abs(nu * (a - q)), std::abs(xi * a)});
  }
  r.balance = std::abs(buy_total - supply_total);
  return cert;
}

/// Certifies an outcome as an optimum of the merit-order LP. λ is taken from
/// the set of duals compatible with the allocation, preferring the outcome's
/// own price and restricted to [p̂_d, p_l] when a trade occurred. If that set
/// is empty the residuals at the closest point are reported.
inline KktCertificate certify_kkt(const ClearingOutcome& outcome, double tolerance = 1e-6) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  double lo = -inf, hi = inf;
  for (const Fill& f : outcome.fills) {
    if (f.excluded) continue;
    const double p = f.order.price;
    const bool full = f.cleared >= f.order.quantity;
    const bool none = f.cleared <= 0;
    if (is_supply(f.order.side)) {
      if (!none) lo = std::max(lo, p);
      if (!full) hi = std::min(hi, p);
    } else {
      if (!none) hi = std::min(hi, p);
      if (!full) lo = std::max(lo, p);
    }
  }
  double preferred = outcome.clearing_price;
  if (outcome.marginal) {
    lo = std::max(lo, outcome.marginal->last_cleared_ask);
    hi = std::min(hi, outcome.marginal->last_cleared_bid);
  } else {
    // Nothing traded: any λ between the bid and ask sides works.
    preferred = std::isfinite(lo) && std::isfinite(hi) ? 0.5 * (lo + hi) : std::isfinite(lo) ? lo : std::isfinite(hi) ? hi : 0.0;
  }
  double lambda = preferred;
  if (lo <= hi) {
    lambda = std::clamp(preferred, lo, hi);
  } else if (outcome.marginal) {
    lambda = std::clamp(preferred, outcome.marginal->last_cleared_ask, outcome.marginal->last_cleared_bid);
  }
  return certify_kkt_at(outcome, lambda, tolerance);
}

inline KktCertificate certify_kkt(const CombinedBook& book, const ClearingOutcome& outcome, double tolerance = 1e-6) {
  if (book.size() != outcome.fills.size()) throw InvalidInput("outcome does not belong to this book");
  return certify_kkt(outcome, tolerance);
}

}  // namespace pda
