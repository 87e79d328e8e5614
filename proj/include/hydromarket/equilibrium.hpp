#pragma once

// Diagonalization towards a market equilibrium. Starting from the
// centralized dispatch (bids = (spot price, generation) per agent), every
// outer iteration
//   1. estimates a Markov chain on the spot prices,
//   2. re-optimizes every price taker against those prices,
//   3. re-optimizes every price maker against the latest bids of the others
//      (revenue = concave hull of its residual-demand revenue curve),
//   4. clears the market for every (stage, sample),
// and stops when no bid moved by more than `tolerance` times its
// centralized value.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "csv.hpp"
#include "dispatch.hpp"
#include "market.hpp"
#include "markov.hpp"
#include "scenarios.hpp"
#include "sddp.hpp"
#include "system.hpp"

namespace hydromarket {

struct CentralizedResult {
  Grid2 prices;
  BidSurface bids;
  sddp::SimulationResult simulation;
  std::vector<sddp::IterationLog> log;
  DispatchTable dispatch;
  double lower_bound = 0.0;
};

/// Trains and simulates the cost-minimizing dispatch. The bid of each agent
/// is (spot price, its generation).
inline CentralizedResult centralized_operation(const SystemModel& sys, const ScenarioSet& sc,
                                               const sddp::Options& opts = {}) {
  CentralizedModel model(sys, sc);
  sddp::Solver solver(model, sddp::MarkovLattice::independent(sys.stages, sc.samples), opts);
  solver.train();
  CentralizedResult out;
  out.simulation = solver.simulate();
  out.log = solver.policy().log;
  out.lower_bound = out.log.empty() ? solver.lower_bound() : out.log.back().lower_bound;
  const auto& L = model.layout();
  out.prices = Grid2(sys.stages, sc.samples);
  out.bids = BidSurface{sys.stages, sc.samples, {}};
  for (const auto& a : sys.agents) out.bids[a.id];
  for (int t = 0; t < sys.stages; ++t)
    for (int s = 0; s < sc.samples; ++s) {
      const auto& rec = out.simulation.at(t, s);
      const double pi = rec.duals[L.load_balance_row];
      out.prices(t, s) = pi;
      for (const auto& a : sys.agents) {
        auto& b = out.bids[a.id];
        b.price(t, s) = pi;
        b.quantity(t, s) = generation_of(sys, model.ownership(), L, rec.primal, sys.owned_by(a.id));
      }
    }
  out.dispatch = DispatchTable(sys, sc.samples);
  out.dispatch.record(model.ownership(), L, out.simulation);
  return out;
}

/// Outcome of one agent's re-optimization.
struct AgentResponse {
  AgentBids bids;
  sddp::SimulationResult simulation;
  StageLayout layout;
  Ownership ownership;
};

namespace detail {

inline AgentResponse zero_capacity_response(const SystemModel& sys, int agent, const ScenarioSet& sc,
                                            const std::function<double(int, int)>& price) {
  AgentResponse r;
  r.bids = AgentBids{Grid2(sys.stages, sc.samples), Grid2(sys.stages, sc.samples)};
  for (int t = 0; t < sys.stages; ++t)
    for (int s = 0; s < sc.samples; ++s) r.bids.price(t, s) = price(t, s);
  r.ownership = sys.owned_by(agent);
  return r;
}

}  // namespace detail

/// Re-optimizes a price taker against exogenous prices; the new bid is the
/// price together with the simulated energy.
inline AgentResponse price_taker_bid(const SystemModel& sys, int agent, const ScenarioSet& sc, const Grid2& prices,
                                     const sddp::MarkovLattice& chain, const sddp::Options& opts,
                                     double indifference_premium = 0.0) {
  if (!(sys.agent_capacity(agent) > 0.0))
    return detail::zero_capacity_response(sys, agent, sc, [&](int t, int s) { return prices(t, s); });
  AgentModel model(sys, agent, sc, PriceTakerRevenue{prices, indifference_premium});
  sddp::Solver solver(model, chain, opts);
  solver.train();
  AgentResponse r;
  r.simulation = solver.simulate();
  r.layout = model.layout();
  r.ownership = model.ownership();
  r.bids = AgentBids{Grid2(sys.stages, sc.samples), Grid2(sys.stages, sc.samples)};
  for (int t = 0; t < sys.stages; ++t)
    for (int s = 0; s < sc.samples; ++s) {
      r.bids.price(t, s) = prices(t, s);
      r.bids.quantity(t, s) = r.simulation.at(t, s).primal[r.layout.energy];
    }
  return r;
}

/// Revenue curve of `agent` at (t, s) given the other agents' bids.
inline RevenueCurve residual_curve(const SystemModel& sys, int agent, const BidSurface& bids, int t, int s) {
  const Agent* a = sys.find_agent(agent);
  ForwardContract fc;
  if (a && a->contract) fc = {a->contract->price, a->contract->quantity(t)};
  return revenue_curve(bids.bids_at(t, s, agent), sys.demand_at(t), fc, sys.agent_capacity(agent),
                       sys.demand.deficit_cost);
}

/// Re-optimizes a price maker against the other agents' bids. The new bid
/// is the simulated energy with the price it induces on the revenue curve.
inline AgentResponse strategic_bid(const SystemModel& sys, int agent, const ScenarioSet& sc, const BidSurface& bids,
                                   const sddp::MarkovLattice& chain, const sddp::Options& opts) {
  if (!(sys.agent_capacity(agent) > 0.0))
    return detail::zero_capacity_response(sys, agent, sc, [&](int t, int s) {
      return clearing_price_for_offer(bids.bids_at(t, s, agent), agent, 0.0, sys.demand_at(t), sys.demand.deficit_cost);
    });
  const int S = sc.samples;
  std::vector<RevenueCurve> curves(static_cast<std::size_t>(sys.stages) * S);
  HullRevenue hulls;
  hulls.hulls.resize(curves.size());
  for (int t = 0; t < sys.stages; ++t)
    for (int s = 0; s < S; ++s) {
      const auto k = static_cast<std::size_t>(t) * S + s;
      curves[k] = residual_curve(sys, agent, bids, t, s);
      hulls.hulls[k] = concave_hull(curves[k]);
    }
  AgentModel model(sys, agent, sc, std::move(hulls));
  sddp::Solver solver(model, chain, opts);
  solver.train();
  AgentResponse r;
  r.simulation = solver.simulate();
  r.layout = model.layout();
  r.ownership = model.ownership();
  r.bids = AgentBids{Grid2(sys.stages, S), Grid2(sys.stages, S)};
  for (int t = 0; t < sys.stages; ++t)
    for (int s = 0; s < S; ++s) {
      const auto& rec = r.simulation.at(t, s);
      const double e = rec.primal[r.layout.energy];
      // the energy row is e - generation = 0, so its dual is minus the
      // marginal cost of own generation
      const double marginal_cost = -rec.duals[r.layout.energy_row];
      r.bids.quantity(t, s) = e;
      r.bids.price(t, s) = hull_consistent_price(curves[static_cast<std::size_t>(t) * S + s], e, marginal_cost);
    }
  return r;
}

/// Contracts from the centralized run: Q^F_t = level x mean generation of
/// the agent at t, P^F = mean spot price.
inline std::map<int, Contract> contract_from_centralized(const CentralizedResult& c, double level) {
  if (!(level >= 0.0 && level <= 1.5)) throw std::invalid_argument("contract level must lie in [0, 1.5]");
  std::map<int, Contract> out;
  const double pf = c.prices.mean();
  for (const auto& [id, b] : c.bids.agents) {
    Contract k;
    k.price = pf;
    for (int t = 0; t < b.quantity.stages(); ++t) {
      double q = 0.0;
      for (int s = 0; s < b.quantity.samples(); ++s) q += b.quantity(t, s);
      k.quantities.push_back(level * q / b.quantity.samples());
    }
    out[id] = std::move(k);
  }
  return out;
}

inline SystemModel with_contracts(SystemModel sys, const std::map<int, Contract>& contracts) {
  for (auto& a : sys.agents) {
    auto it = contracts.find(a.id);
    if (it != contracts.end()) a.contract = it->second;
  }
  return sys;
}

struct EquilibriumOptions {
  int max_outer_iterations = 10;
  double tolerance = 0.01;
  int markov_states = 3;
  std::uint64_t seed = 1;
  int workers = 1;
  double indifference_premium = 1e-6;
  sddp::Options training{.max_iterations = 30};
};

struct ConvergenceRecord {
  int iteration = 0;
  double max_price_delta = 0.0;     // relative to the centralized price
  double max_quantity_delta = 0.0;  // relative to the centralized quantity
  double mean_price = 0.0;
};

struct AgentSummary {
  int id = 0;
  AgentKind kind = AgentKind::PriceTaker;
  double revenue = 0.0;             // summed over stages, averaged over samples
  double energy = 0.0;              // accepted MWh, summed over stages, averaged over samples
  double normalized_revenue = 0.0;  // $/MWh
};

struct EquilibriumReport {
  bool converged = false;
  int iterations = 0;
  CentralizedResult centralized;
  Grid2 prices;
  BidSurface bids;
  std::vector<BidSurface> history;  // bids after each iteration, centralized first
  std::map<int, Grid2> accepted;
  std::vector<ConvergenceRecord> trace;
  std::vector<AgentSummary> agents;
  DispatchTable dispatch;
  double mean_price = 0.0;
  double spillage_percent = 0.0;
  double storage_percent = 0.0;
  double hhi = 0.0;
};

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (a + 1) + 0xBF58476D1CE4E5B9ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Contract-adjusted revenue of each agent with the cleared prices and accepted
/// quantities.
inline std::vector<AgentSummary> summarize_agents(const SystemModel& sys, const Grid2& prices,
                                                  const std::map<int, Grid2>& accepted) {
  std::vector<AgentSummary> out;
  const int S = prices.samples();
  for (int id : sys.agent_ids()) {
    const Agent* a = sys.find_agent(id);
    AgentSummary sm;
    sm.id = id;
    sm.kind = a->kind;
    const auto& q = accepted.at(id);
    for (int t = 0; t < prices.stages(); ++t)
      for (int s = 0; s < S; ++s) {
        const double pf = a->contract ? a->contract->price : 0.0;
        const double qf = a->contract ? a->contract->quantity(t) : 0.0;
        sm.revenue += pf * qf - prices(t, s) * qf + prices(t, s) * q(t, s);
        sm.energy += q(t, s);
      }
    sm.revenue /= S;
    sm.energy /= S;
    sm.normalized_revenue = sm.energy > 0.0 ? sm.revenue / sm.energy : 0.0;
    out.push_back(sm);
  }
  return out;
}

inline EquilibriumReport run_equilibrium(const SystemModel& sys, const ScenarioSet& sc,
                                         const EquilibriumOptions& opt = {}) {
  const int T = sys.stages;
  const int S = sc.samples;
  EquilibriumReport rep;
  rep.hhi = herfindahl_index(sys);

  auto training = opt.training;
  training.workers = opt.workers;
  training.seed = detail::mix_seed(opt.seed, 0, 0);
  rep.centralized = centralized_operation(sys, sc, training);
  rep.bids = rep.centralized.bids;
  rep.prices = rep.centralized.prices;
  rep.history.push_back(rep.bids);
  rep.dispatch = rep.centralized.dispatch;

  double max_demand = 0.0;
  for (double d : sys.demand.demand) max_demand = std::max(max_demand, d);
  const double price_floor = 1e-6 * std::max(sys.demand.deficit_cost, 1.0);
  const double quantity_floor = 1e-6 * std::max(max_demand, 1.0);

  std::vector<int> takers, makers;
  for (int id : sys.agent_ids()) (sys.find_agent(id)->kind == AgentKind::PriceMaker ? makers : takers).push_back(id);
  const int K = std::max(1, std::min(opt.markov_states, S));

  for (int it = 1; it <= opt.max_outer_iterations; ++it) {
    const BidSurface previous = rep.bids;

    const auto price_chain = estimate_chain(price_features(rep.prices), K, detail::mix_seed(opt.seed, it, 0), opt.workers);
    for (int id : takers) {
      training.seed = detail::mix_seed(opt.seed, it, static_cast<std::uint64_t>(id) + 1);
      auto r = price_taker_bid(sys, id, sc, rep.prices, price_chain, training, opt.indifference_premium);
      rep.bids[id] = r.bids;
      if (!r.ownership.empty()) rep.dispatch.record(r.ownership, r.layout, r.simulation);
    }
    for (int id : makers) {
      const auto chain =
          estimate_chain(bid_features(rep.bids, id), K, detail::mix_seed(opt.seed, it, 0x100000000ull + id), opt.workers);
      training.seed = detail::mix_seed(opt.seed, it, static_cast<std::uint64_t>(id) + 1);
      auto r = strategic_bid(sys, id, sc, rep.bids, chain, training);
      rep.bids[id] = r.bids;
      if (!r.ownership.empty()) rep.dispatch.record(r.ownership, r.layout, r.simulation);
    }

    // clearing
    std::map<int, Grid2> accepted;
    for (const auto& [id, b] : rep.bids.agents) accepted[id] = Grid2(T, S);
    std::vector<ClearingOutcome> outcomes(static_cast<std::size_t>(T) * S);
    parallel_for(T * S, opt.workers, [&](int k) {
      const int t = k / S, s = k % S;
      outcomes[k] = clear_with_deficit(rep.bids.bids_at(t, s), sys.demand_at(t), sys.demand.deficit_cost);
    });
    for (int t = 0; t < T; ++t)
      for (int s = 0; s < S; ++s) {
        const auto& out = outcomes[static_cast<std::size_t>(t) * S + s];
        rep.prices(t, s) = out.price;
        std::size_t i = 0;
        for (const auto& [id, b] : rep.bids.agents) accepted[id](t, s) = out.accepted[i++];
      }
    rep.accepted = std::move(accepted);
    rep.history.push_back(rep.bids);

    ConvergenceRecord cr;
    cr.iteration = it;
    cr.mean_price = rep.prices.mean();
    for (const auto& [id, b] : rep.bids.agents) {
      const auto& p = previous.at(id);
      const auto& c = rep.centralized.bids.at(id);
      for (int t = 0; t < T; ++t)
        for (int s = 0; s < S; ++s) {
          cr.max_price_delta = std::max(cr.max_price_delta, std::abs(b.price(t, s) - p.price(t, s)) /
                                                                std::max(std::abs(c.price(t, s)), price_floor));
          cr.max_quantity_delta =
              std::max(cr.max_quantity_delta, std::abs(b.quantity(t, s) - p.quantity(t, s)) /
                                                  std::max(std::abs(c.quantity(t, s)), quantity_floor));
        }
    }
    rep.trace.push_back(cr);
    rep.iterations = it;
    if (cr.max_price_delta <= opt.tolerance && cr.max_quantity_delta <= opt.tolerance) {
      rep.converged = true;
      break;
    }
  }

  if (rep.accepted.empty()) {
    // no iteration ran: report the centralized outcome
    for (const auto& [id, b] : rep.bids.agents) rep.accepted[id] = b.quantity;
  }
  rep.agents = summarize_agents(sys, rep.prices, rep.accepted);
  rep.mean_price = rep.prices.mean();
  rep.spillage_percent = rep.dispatch.spillage_percent();
  rep.storage_percent = rep.dispatch.storage_percent(sys);
  return rep;
}

// ---------------------------------------------------------------------------
// Results directory

inline void write_prices_csv(std::ostream& os, const Grid2& prices) {
  os << "stage,sample,price\n";
  for (int t = 0; t < prices.stages(); ++t)
    for (int s = 0; s < prices.samples(); ++s) os << t + 1 << ',' << s + 1 << ',' << csv::num(prices(t, s)) << '\n';
}

inline void write_bid_rows(std::ostream& os, int iteration, const BidSurface& b) {
  for (const auto& [id, ab] : b.agents)
    for (int t = 0; t < b.stages; ++t)
      for (int s = 0; s < b.samples; ++s)
        os << iteration << ',' << id << ',' << t + 1 << ',' << s + 1 << ',' << csv::num(ab.price(t, s)) << ','
           << csv::num(ab.quantity(t, s)) << '\n';
}

inline void write_training_log_csv(std::ostream& os, const std::vector<sddp::IterationLog>& log) {
  os << "iteration,lower_bound,upper_bound_mean,upper_bound_stderr\n";
  for (const auto& l : log)
    os << l.iteration << ',' << csv::num(l.lower_bound) << ',' << csv::num(l.upper_bound_mean) << ','
       << csv::num(l.upper_bound_stderr) << '\n';
}

inline nlohmann::json report_json(const EquilibriumReport& rep) {
  nlohmann::json j;
  j["converged"] = rep.converged;
  j["iterations"] = rep.iterations;
  j["mean_price"] = rep.mean_price;
  j["centralized_mean_price"] = rep.centralized.prices.mean();
  j["mean_spillage_percent"] = rep.spillage_percent;
  j["mean_storage_percent"] = rep.storage_percent;
  j["hhi"] = rep.hhi;
  j["agents"] = nlohmann::json::array();
  for (const auto& a : rep.agents)
    j["agents"].push_back({{"id", a.id},
                           {"kind", to_string(a.kind)},
                           {"revenue", a.revenue},
                           {"energy", a.energy},
                           {"normalized_revenue", a.normalized_revenue}});
  return j;
}

inline void write_equilibrium_results(const std::filesystem::path& dir, const SystemModel& sys,
                                      const EquilibriumReport& rep) {
  std::filesystem::create_directories(dir);
  csv::write_atomic(dir / "prices.csv", [&](std::ostream& os) { write_prices_csv(os, rep.prices); });
  csv::write_atomic(dir / "bids.csv", [&](std::ostream& os) {
    os << "iteration,agent,stage,sample,price,quantity\n";
    for (std::size_t k = 0; k < rep.history.size(); ++k) write_bid_rows(os, static_cast<int>(k), rep.history[k]);
  });
  csv::write_atomic(dir / "dispatch.csv", [&](std::ostream& os) { write_dispatch_csv(os, sys, rep.dispatch); });
  csv::write_atomic(dir / "convergence.csv", [&](std::ostream& os) {
    os << "iteration,max_price_delta,max_quantity_delta,mean_price\n";
    for (const auto& c : rep.trace)
      os << c.iteration << ',' << csv::num(c.max_price_delta) << ',' << csv::num(c.max_quantity_delta) << ','
         << csv::num(c.mean_price) << '\n';
  });
  csv::write_atomic(dir / "report.json", [&](std::ostream& os) { os << report_json(rep).dump(2) << '\n'; });
}

inline void write_centralized_results(const std::filesystem::path& dir, const SystemModel& sys,
                                      const CentralizedResult& c) {
  std::filesystem::create_directories(dir);
  csv::write_atomic(dir / "prices.csv", [&](std::ostream& os) { write_prices_csv(os, c.prices); });
  csv::write_atomic(dir / "bids.csv", [&](std::ostream& os) {
    os << "iteration,agent,stage,sample,price,quantity\n";
    write_bid_rows(os, 0, c.bids);
  });
  csv::write_atomic(dir / "dispatch.csv", [&](std::ostream& os) { write_dispatch_csv(os, sys, c.dispatch); });
  csv::write_atomic(dir / "training_log.csv", [&](std::ostream& os) { write_training_log_csv(os, c.log); });
  csv::write_atomic(dir / "report.json", [&](std::ostream& os) {
    nlohmann::json j;
    j["mean_price"] = c.prices.mean();
    j["lower_bound"] = c.lower_bound;
    j["mean_simulated_cost"] = c.simulation.mean_cost();
    j["simulated_cost_stderr"] = c.simulation.stderr_cost();
    j["mean_spillage_percent"] = c.dispatch.spillage_percent();
    j["mean_storage_percent"] = c.dispatch.storage_percent(sys);
    os << j.dump(2) << '\n';
  });
}

}  // namespace hydromarket
