#pragma once

// Bid-based market clearing and the strategic revenue model.
//
// Clearing is a single-bus LP: min sum(P_i q_i) s.t. sum(q_i) = D,
// 0 <= q_i <= Q_i. Columns are laid out in merit order (price, then agent
// id), which makes the simplex fill bids in that order; the spot price is
// the dual of the balance row and equals the price of the last accepted
// bid. When demand is met exactly at a bid's full quantity that bid is the
// marginal one (the cheaper side of the break).
//
// A price maker facing the other agents' bids offers energy e at price zero.
// Its revenue with a forward contract (P^F, Q^F) is
//     revenue(e) = P^F Q^F - pi(e) Q^F + pi(e) e,
// piecewise affine in e with a right-continuous, nonincreasing price pi(e).
// The concave majorant of that curve (vertices E^Q, E^R) is embedded in
// stage LPs through convex-combination weights.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "csv.hpp"
#include "lp.hpp"
#include "scenarios.hpp"
#include "system.hpp"

namespace hydromarket {

class MarketError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Bid {
  int agent = 0;
  double price = 0.0;     // $/MWh
  double quantity = 0.0;  // MWh
};

struct ClearingOutcome {
  std::vector<double> accepted;  // aligned with the input bids
  double price = 0.0;
  double total_cost = 0.0;
};

/// Bids indexed by stage x sample for one agent.
struct AgentBids {
  Grid2 price;
  Grid2 quantity;

  bool operator==(const AgentBids&) const = default;
};

/// Bids of every agent over the scenario grid, keyed by agent id.
struct BidSurface {
  int stages = 0;
  int samples = 0;
  std::map<int, AgentBids> agents;

  AgentBids& operator[](int agent) {
    auto it = agents.find(agent);
    if (it == agents.end()) it = agents.emplace(agent, AgentBids{Grid2(stages, samples), Grid2(stages, samples)}).first;
    return it->second;
  }
  const AgentBids& at(int agent) const { return agents.at(agent); }

  /// Bids at (t, s) of all agents except `excluded`.
  std::vector<Bid> bids_at(int t, int s, int excluded = std::numeric_limits<int>::min()) const {
    std::vector<Bid> out;
    for (const auto& [id, b] : agents)
      if (id != excluded) out.push_back({id, b.price(t, s), b.quantity(t, s)});
    return out;
  }

  bool operator==(const BidSurface&) const = default;
};

inline std::vector<std::size_t> merit_order(const std::vector<Bid>& bids) {
  std::vector<std::size_t> idx(bids.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (bids[a].price != bids[b].price) return bids[a].price < bids[b].price;
    return bids[a].agent < bids[b].agent;
  });
  return idx;
}

/// Clears the market through the LP kernel. The caller includes the deficit
/// bid when one is needed; demand that the bids cannot cover is an error.
inline ClearingOutcome clear_market(const std::vector<Bid>& bids, double demand) {
  for (const auto& b : bids)
    if (!(b.quantity >= 0.0) || !std::isfinite(b.price)) throw MarketError("clear_market: invalid bid");
  const auto order = merit_order(bids);
  lp::LinearProgram lp;
  std::vector<lp::Term> balance;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto& b = bids[order[k]];
    const int c = lp.add_column(b.price, 0.0, b.quantity);
    balance.push_back({c, 1.0});
  }
  lp.add_row(std::move(balance), lp::Sense::Equal, demand, "balance");
  const auto sol = lp::solve(lp);
  if (!sol.optimal()) throw MarketError("clear_market: demand cannot be served by the offered quantities");
  ClearingOutcome out;
  out.accepted.assign(bids.size(), 0.0);
  // Within a group of equal prices the LP leaves the split open; fill the
  // group's total in ascending agent id.
  for (std::size_t k = 0; k < order.size();) {
    std::size_t end = k;
    double total = 0.0;
    while (end < order.size() && bids[order[end]].price == bids[order[k]].price) total += sol.primal[end++];
    for (; k < end; ++k) {
      const double q = std::min(total, bids[order[k]].quantity);
      out.accepted[order[k]] = q;
      total = std::max(total - q, 0.0);
    }
  }
  out.price = sol.duals[0];
  out.total_cost = sol.objective;
  return out;
}

/// Appends the always-available deficit offer and clears.
inline ClearingOutcome clear_with_deficit(std::vector<Bid> bids, double demand, double deficit_cost) {
  bids.push_back({kDeficitAgentId, deficit_cost, std::max(demand, 0.0)});
  auto out = clear_market(bids, demand);
  out.accepted.pop_back();
  return out;
}

// ---------------------------------------------------------------------------
// Revenue curve

struct ForwardContract {
  double price = 0.0;     // P^F
  double quantity = 0.0;  // Q^F
};

struct PriceSegment {
  double lo = 0.0;
  double hi = 0.0;
  double price = 0.0;
};

struct RevenueCurve {
  std::vector<PriceSegment> segments;  // contiguous, covering [0, e_max]
  ForwardContract contract;
  double e_max = 0.0;

  double revenue_at_price(double e, double pi) const {
    return contract.price * contract.quantity - pi * contract.quantity + pi * e;
  }

  /// Right-continuous price.
  double price(double e) const {
    for (const auto& seg : segments)
      if (e >= seg.lo && e < seg.hi) return seg.price;
    return segments.back().price;
  }

  /// Price just to the left of e (equal to price(e) away from breaks).
  double left_price(double e) const {
    for (const auto& seg : segments)
      if (e > seg.lo && e <= seg.hi) return seg.price;
    return segments.front().price;
  }

  double revenue(double e) const { return revenue_at_price(e, price(e)); }
  double left_revenue(double e) const { return revenue_at_price(e, left_price(e)); }
};

/// Revenue of a zero-priced offer e against the other agents' bids. The
/// deficit offer (unlimited, at deficit_cost) closes the residual demand.
inline RevenueCurve revenue_curve(const std::vector<Bid>& others, double demand, const ForwardContract& contract,
                                  double e_max, double deficit_cost) {
  if (!(e_max > 0.0)) throw std::invalid_argument("revenue_curve: e_max must be positive");
  auto order = merit_order(others);
  // residual demand D - e is served by the k-th cheapest bid when
  // C_{k-1} < D - e <= C_k, i.e. e in [D - C_k, D - C_{k-1})
  struct Step {
    double start;  // lowest e of this price
    double price;
  };
  std::vector<Step> steps;  // ordered by decreasing e
  steps.push_back({demand, 0.0});
  double cum = 0.0;
  for (auto i : order) {
    if (!(others[i].quantity > 0.0)) continue;
    cum += others[i].quantity;
    steps.push_back({demand - cum, others[i].price});
  }
  steps.push_back({-std::numeric_limits<double>::infinity(), deficit_cost});

  RevenueCurve c;
  c.contract = contract;
  c.e_max = e_max;
  // walk upward in e
  for (std::size_t k = steps.size(); k-- > 0;) {
    const double lo = std::max(steps[k].start, 0.0);
    const double hi = k == 0 ? e_max : std::min(steps[k - 1].start, e_max);
    if (hi > lo) c.segments.push_back({lo, hi, steps[k].price});
  }
  if (c.segments.empty()) c.segments.push_back({0.0, e_max, 0.0});
  // merge equal neighbouring prices
  std::vector<PriceSegment> merged;
  for (const auto& s : c.segments) {
    if (!merged.empty() && merged.back().price == s.price) merged.back().hi = s.hi;
    else merged.push_back(s);
  }
  c.segments = std::move(merged);
  c.segments.front().lo = 0.0;
  c.segments.back().hi = e_max;
  return c;
}

// ---------------------------------------------------------------------------
// Concave envelope

struct HullVertex {
  double quantity = 0.0;  // E^Q
  double revenue = 0.0;   // E^R
};

struct RevenueHull {
  std::vector<HullVertex> vertices;  // ascending quantity, strictly decreasing slopes

  double min_quantity() const { return vertices.front().quantity; }
  double max_quantity() const { return vertices.back().quantity; }

  double value(double e) const {
    if (vertices.size() == 1) return vertices.front().revenue;
    if (e <= vertices.front().quantity) return vertices.front().revenue;
    for (std::size_t k = 1; k < vertices.size(); ++k) {
      const auto& a = vertices[k - 1];
      const auto& b = vertices[k];
      if (e <= b.quantity) {
        const double w = (e - a.quantity) / (b.quantity - a.quantity);
        return a.revenue + w * (b.revenue - a.revenue);
      }
    }
    return vertices.back().revenue;
  }

  double max_revenue() const {
    double m = -std::numeric_limits<double>::infinity();
    for (const auto& v : vertices) m = std::max(m, v.revenue);
    return m;
  }
};

/// Upper concave envelope of a point set (Andrew's monotone chain, upper
/// half). Points sharing an abscissa keep the highest ordinate; collinear
/// interior points are dropped.
inline RevenueHull upper_hull(std::vector<HullVertex> pts) {
  if (pts.empty()) throw std::invalid_argument("upper_hull: no points");
  std::sort(pts.begin(), pts.end(), [](const HullVertex& a, const HullVertex& b) {
    if (a.quantity != b.quantity) return a.quantity < b.quantity;
    return a.revenue > b.revenue;
  });
  std::vector<HullVertex> uniq;
  for (const auto& p : pts)
    if (uniq.empty() || uniq.back().quantity != p.quantity) uniq.push_back(p);

  auto turn = [](const HullVertex& o, const HullVertex& a, const HullVertex& b) {
    const double l = (a.quantity - o.quantity) * (b.revenue - o.revenue);
    const double r = (a.revenue - o.revenue) * (b.quantity - o.quantity);
    const double scale = std::max({1.0, std::abs(l), std::abs(r)});
    const double cross = l - r;
    return std::abs(cross) <= 1e-12 * scale ? 0.0 : cross;
  };
  RevenueHull h;
  for (const auto& p : uniq) {
    while (h.vertices.size() >= 2 && turn(h.vertices[h.vertices.size() - 2], h.vertices.back(), p) >= 0.0)
      h.vertices.pop_back();
    h.vertices.push_back(p);
  }
  return h;
}

/// Concave majorant of a revenue curve. Candidates are both one-sided
/// limits at every break plus the endpoints.
inline RevenueHull concave_hull(const RevenueCurve& curve) {
  std::vector<HullVertex> pts;
  for (const auto& seg : curve.segments) {
    pts.push_back({seg.lo, curve.revenue_at_price(seg.lo, seg.price)});
    pts.push_back({seg.hi, curve.revenue_at_price(seg.hi, seg.price)});
  }
  return upper_hull(std::move(pts));
}

struct HullTerms {
  std::vector<int> weights;  // lambda columns, one per vertex
  int quantity_row = -1;     // sum(lambda E^Q) - e = 0
  int convexity_row = -1;    // sum(lambda) = 1
};

/// Adds -sum(lambda_j E^R_j) to a minimization objective with the convex
/// combination rows tying the weights to the energy column.
inline HullTerms add_hull_revenue(lp::LinearProgram& lp, const RevenueHull& hull, int energy_column) {
  if (hull.vertices.size() < 1) throw std::invalid_argument("add_hull_revenue: empty hull");
  HullTerms h;
  std::vector<lp::Term> qty{{energy_column, -1.0}};
  std::vector<lp::Term> conv;
  for (std::size_t v = 0; v < hull.vertices.size(); ++v) {
    const int c = lp.add_column(-hull.vertices[v].revenue, 0.0, lp::kInf, "lambda_" + std::to_string(v));
    h.weights.push_back(c);
    if (hull.vertices[v].quantity != 0.0) qty.push_back({c, hull.vertices[v].quantity});
    conv.push_back({c, 1.0});
  }
  h.quantity_row = lp.add_row(std::move(qty), lp::Sense::Equal, 0.0, "hull_quantity");
  h.convexity_row = lp.add_row(std::move(conv), lp::Sense::Equal, 1.0, "hull_convexity");
  return h;
}

/// Price consistent with the hull's revenue at e: away from breaks the curve
/// price; at a break, the side whose one-sided revenue is larger (cheaper
/// side on ties).
inline double hull_consistent_price(const RevenueCurve& curve, double e) {
  const double tol = 1e-9 * std::max(1.0, curve.e_max);
  for (std::size_t k = 1; k < curve.segments.size(); ++k) {
    const double b = curve.segments[k].lo;
    if (std::abs(e - b) <= tol) {
      const double left = curve.revenue_at_price(b, curve.segments[k - 1].price);
      const double right = curve.revenue_at_price(b, curve.segments[k].price);
      return left > right ? curve.segments[k - 1].price : curve.segments[k].price;
    }
  }
  return curve.price(std::clamp(e, 0.0, curve.e_max));
}

/// As above, but when both sides of a break give the same revenue the agent
/// is indifferent to the price and offers at its own marginal cost, clamped
/// to the prices of the two sides.
inline double hull_consistent_price(const RevenueCurve& curve, double e, double marginal_cost) {
  const double tol = 1e-9 * std::max(1.0, curve.e_max);
  for (std::size_t k = 1; k < curve.segments.size(); ++k) {
    const double b = curve.segments[k].lo;
    if (std::abs(e - b) <= tol) {
      const double pl = curve.segments[k - 1].price;
      const double pr = curve.segments[k].price;
      const double left = curve.revenue_at_price(b, pl);
      const double right = curve.revenue_at_price(b, pr);
      const double rtol = 1e-9 * std::max({1.0, std::abs(left), std::abs(right)});
      if (left > right + rtol) return pl;
      if (right > left + rtol) return pr;
      return std::clamp(marginal_cost, std::min(pl, pr), std::max(pl, pr));
    }
  }
  return curve.price(std::clamp(e, 0.0, curve.e_max));
}

/// Spot price when offer e (at zero price) clears against the other bids
/// and the deficit offer, computed by the clearing LP.
inline double clearing_price_for_offer(std::vector<Bid> others, int agent, double e, double demand,
                                       double deficit_cost) {
  others.push_back({agent, 0.0, std::max(e, 0.0)});
  return clear_with_deficit(std::move(others), demand, deficit_cost).price;
}

// ---------------------------------------------------------------------------
// Plot data: "e,price,revenue,is_hull_vertex"

inline void write_curve_csv(std::ostream& os, const RevenueCurve& curve, const RevenueHull& hull) {
  os << "e,price,revenue,is_hull_vertex\n";
  auto is_vertex = [&](double e, double r) {
    for (const auto& v : hull.vertices)
      if (std::abs(v.quantity - e) <= 1e-9 * std::max(1.0, std::abs(e)) &&
          std::abs(v.revenue - r) <= 1e-9 * std::max(1.0, std::abs(r)))
        return true;
    return false;
  };
  for (const auto& seg : curve.segments) {
    for (double e : {seg.lo, seg.hi}) {
      const double r = curve.revenue_at_price(e, seg.price);
      os << csv::num(e) << ',' << csv::num(seg.price) << ',' << csv::num(r) << ',' << (is_vertex(e, r) ? 1 : 0)
         << '\n';
    }
  }
}

inline std::vector<Bid> read_bids_csv(std::istream& in) {
  std::vector<Bid> bids;
  for (const auto& r : csv::read(in, "agent,price,quantity"))
    bids.push_back({csv::to_int(r[0], "agent"), csv::to_double(r[1], "price"), csv::to_double(r[2], "quantity")});
  return bids;
}

}  // namespace hydromarket
