#pragma once

// Stage LP builders for the centralized cost-minimizing dispatch and for a
// single agent maximizing its own profit.
//
// Physical block (shared by both), for the plants in scope:
//   thermal   0 <= g_j <= G_j
//   hydro     0 <= u_j <= U_j, z_j >= 0, 0 <= v'_j <= V_j, a_j free
//   renewable 0 <= r_j <= R_j(t, s)          (curtailment is free)
//   water     v'_j + u_j + z_j - sum_{n upstream of j}(u_n + z_n) - a_j = v_j
//   inflow    a_j = sum_l phi_{j,l} a_j^{t-l} + eps_j(t, s)
// State: storage of each hydro, then its lagged inflows (lag 1 first).
// Lags beyond the first are carried by copy columns.
//
// Centralized stage: minimize thermal + deficit cost subject to the single
// load balance; the balance dual is the spot price.
// Agent stage: energy e equals own generation and the objective is
// -revenue(e) + own thermal cost, with revenue either pi(t, s) e (price
// taker) or the concave hull of the strategic revenue curve. Forward
// contracts follow P^F Q^F - pi Q^F + pi e.

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "csv.hpp"
#include "lp.hpp"
#include "market.hpp"
#include "scenarios.hpp"
#include "sddp.hpp"
#include "system.hpp"

namespace hydromarket {

/// Column and row positions inside one stage LP. Identical for every
/// (stage, Markov state, sample) of a given model; plant vectors follow the
/// model's plant ordering (all plants for the centralized model, owned
/// plants for an agent).
struct StageLayout {
  std::vector<int> thermal;
  std::vector<int> turbine;
  std::vector<int> spill;
  std::vector<int> volume;
  std::vector<int> inflow;
  std::vector<int> renewable;
  int deficit = -1;
  int energy = -1;
  int load_balance_row = -1;
  int energy_row = -1;
  std::vector<int> water_rows;
  std::vector<int> inflow_rows;
  std::vector<int> state_columns;
  std::vector<std::vector<sddp::StateLink>> state_links;
};

namespace detail {

inline void add_physical_block(lp::LinearProgram& lp, StageLayout& L, const SystemModel& sys, const Ownership& own,
                               const ScenarioSet& sc, const Grid3& noise, int t, int s) {
  const int lags = sys.num_lags();
  const auto up = sys.upstream_indices();

  for (int j : own.thermals)
    L.thermal.push_back(lp.add_column(sys.thermals[j].cost, 0.0, sys.thermals[j].max_generation, "g_" + sys.thermals[j].id));
  for (int j : own.hydros) {
    const auto& h = sys.hydros[j];
    L.turbine.push_back(lp.add_column(0.0, 0.0, h.max_turbine, "u_" + h.id));
    L.spill.push_back(lp.add_column(0.0, 0.0, lp::kInf, "z_" + h.id));
    L.volume.push_back(lp.add_column(0.0, 0.0, h.max_storage, "v_" + h.id));
    L.inflow.push_back(lp.add_column(0.0, -lp::kInf, lp::kInf, "a_" + h.id));
  }
  for (int j : own.renewables)
    L.renewable.push_back(lp.add_column(0.0, 0.0, sc.renewables(t, s, j), "r_" + sys.renewables[j].id));

  // position of each owned hydro in the layout vectors
  std::vector<int> pos(sys.hydros.size(), -1);
  for (std::size_t k = 0; k < own.hydros.size(); ++k) pos[own.hydros[k]] = static_cast<int>(k);

  const int H = static_cast<int>(own.hydros.size());
  L.state_columns.assign(H * (1 + lags), -1);
  L.state_links.assign(H * (1 + lags), {});
  auto lag_dim = [&](int k, int l) { return H + k * lags + l; };  // l is 0-based (lag l+1)

  for (int k = 0; k < H; ++k) {
    const int j = own.hydros[k];
    std::vector<lp::Term> w{{L.volume[k], 1.0}, {L.turbine[k], 1.0}, {L.spill[k], 1.0}, {L.inflow[k], -1.0}};
    for (int n : up[j]) {
      if (pos[n] < 0) throw std::invalid_argument("dispatch: upstream plant " + sys.hydros[n].id + " not in scope");
      w.push_back({L.turbine[pos[n]], -1.0});
      w.push_back({L.spill[pos[n]], -1.0});
    }
    const int wr = lp.add_row(std::move(w), lp::Sense::Equal, 0.0, "water_" + sys.hydros[j].id);
    L.water_rows.push_back(wr);
    L.state_columns[k] = L.volume[k];
    L.state_links[k].push_back({wr, 1.0});

    const int ar = lp.add_row({{L.inflow[k], 1.0}}, lp::Sense::Equal, noise(t, s, j), "inflow_" + sys.hydros[j].id);
    L.inflow_rows.push_back(ar);
    const auto& phi = sys.hydros[j].ar_lags;
    for (int l = 0; l < lags; ++l)
      if (phi[l] != 0.0) L.state_links[lag_dim(k, l)].push_back({ar, phi[l]});

    if (lags > 0) L.state_columns[lag_dim(k, 0)] = L.inflow[k];
    for (int l = 1; l < lags; ++l) {
      // outgoing lag l+1 equals incoming lag l
      const int c = lp.add_column(0.0, -lp::kInf, lp::kInf, "lag" + std::to_string(l + 1) + "_" + sys.hydros[j].id);
      const int r = lp.add_row({{c, 1.0}}, lp::Sense::Equal, 0.0, "lagcopy" + std::to_string(l + 1) + "_" + sys.hydros[j].id);
      L.state_columns[lag_dim(k, l)] = c;
      L.state_links[lag_dim(k, l - 1)].push_back({r, 1.0});
    }
  }
}

inline std::vector<double> initial_state_for(const SystemModel& sys, const Ownership& own) {
  const int lags = sys.num_lags();
  std::vector<double> x;
  for (int j : own.hydros) x.push_back(sys.hydros[j].initial_storage);
  for (int j : own.hydros)
    for (int l = 0; l < lags; ++l) x.push_back(sys.hydros[j].initial_lagged_inflows[l]);
  return x;
}

inline Ownership everything(const SystemModel& sys) {
  Ownership o;
  for (std::size_t j = 0; j < sys.hydros.size(); ++j) o.hydros.push_back(static_cast<int>(j));
  for (std::size_t j = 0; j < sys.thermals.size(); ++j) o.thermals.push_back(static_cast<int>(j));
  for (std::size_t j = 0; j < sys.renewables.size(); ++j) o.renewables.push_back(static_cast<int>(j));
  return o;
}

}  // namespace detail

/// Cost-minimizing dispatch of the whole system.
class CentralizedModel : public sddp::StageModelBuilder {
 public:
  CentralizedModel(const SystemModel& sys, const ScenarioSet& sc)
      : sys_(sys), sc_(sc), own_(detail::everything(sys)), noise_(inflow_noise(sys, sc)) {
    layout_ = build_layout(0, 0).second;
  }

  int stages() const override { return sys_.stages; }
  int samples() const override { return sc_.samples; }
  int state_dimension() const override { return static_cast<int>(layout_.state_columns.size()); }
  std::vector<double> initial_state() const override { return detail::initial_state_for(sys_, own_); }

  sddp::StageProblem build(int t, int /*markov_state*/, int s) const override {
    auto [lp, L] = build_layout(t, s);
    return {std::move(lp), L.state_columns, L.state_links};
  }

  const StageLayout& layout() const { return layout_; }
  const Ownership& ownership() const { return own_; }

 private:
  std::pair<lp::LinearProgram, StageLayout> build_layout(int t, int s) const {
    lp::LinearProgram lp;
    StageLayout L;
    detail::add_physical_block(lp, L, sys_, own_, sc_, noise_, t, s);
    L.deficit = lp.add_column(sys_.demand.deficit_cost, 0.0, lp::kInf, "deficit");
    std::vector<lp::Term> bal;
    for (int c : L.thermal) bal.push_back({c, 1.0});
    for (std::size_t k = 0; k < L.turbine.size(); ++k)
      bal.push_back({L.turbine[k], sys_.hydros[own_.hydros[k]].production_factor});
    for (int c : L.renewable) bal.push_back({c, 1.0});
    bal.push_back({L.deficit, 1.0});
    L.load_balance_row = lp.add_row(std::move(bal), lp::Sense::Equal, sys_.demand_at(t), "load_balance");
    return {std::move(lp), std::move(L)};
  }

  const SystemModel& sys_;
  const ScenarioSet& sc_;
  Ownership own_;
  Grid3 noise_;
  StageLayout layout_;
};

/// Exogenous price per (stage, sample).
struct PriceTakerRevenue {
  Grid2 prices;
  /// Relative bonus on the price of energy, so that when the price equals a
  /// unit's marginal cost the agent offers the unit rather than withholding
  /// it. Zero gives the exact model.
  double indifference_premium = 0.0;
};

/// Concave revenue hull per (stage, sample), built with the contract terms
/// already included.
struct HullRevenue {
  std::vector<RevenueHull> hulls;  // [t * samples + s]
};

using RevenueRepresentation = std::variant<PriceTakerRevenue, HullRevenue>;

/// Profit-maximizing operation of the plants owned by one agent.
class AgentModel : public sddp::StageModelBuilder {
 public:
  AgentModel(const SystemModel& sys, int agent_id, const ScenarioSet& sc, RevenueRepresentation revenue)
      : sys_(sys), sc_(sc), agent_(agent_id), own_(sys.owned_by(agent_id)), noise_(inflow_noise(sys, sc)),
        revenue_(std::move(revenue)) {
    const Agent* a = sys.find_agent(agent_id);
    if (!a) throw std::invalid_argument("AgentModel: unknown agent " + std::to_string(agent_id));
    if (a->contract) contract_ = *a->contract;
    e_max_ = sys.agent_capacity(agent_id);
    if (auto* h = std::get_if<HullRevenue>(&revenue_)) {
      if (static_cast<int>(h->hulls.size()) != sc.stages * sc.samples)
        throw std::invalid_argument("AgentModel: hull table does not cover every stage and sample");
    }
    if (auto* p = std::get_if<PriceTakerRevenue>(&revenue_)) {
      if (p->prices.stages() != sc.stages || p->prices.samples() != sc.samples)
        throw std::invalid_argument("AgentModel: price table does not match scenario dimensions");
    }
    compute_floors();
    layout_ = build_layout(0, 0).second;
  }

  int stages() const override { return sys_.stages; }
  int samples() const override { return sc_.samples; }
  int state_dimension() const override { return static_cast<int>(layout_.state_columns.size()); }
  std::vector<double> initial_state() const override { return detail::initial_state_for(sys_, own_); }
  double future_cost_floor(int t) const override { return floors_[t]; }

  sddp::StageProblem build(int t, int /*markov_state*/, int s) const override {
    auto [lp, L] = build_layout(t, s);
    return {std::move(lp), L.state_columns, L.state_links};
  }

  const StageLayout& layout() const { return layout_; }
  const Ownership& ownership() const { return own_; }
  double max_energy() const { return e_max_; }
  int agent() const { return agent_; }

 private:
  std::pair<lp::LinearProgram, StageLayout> build_layout(int t, int s) const {
    lp::LinearProgram lp;
    StageLayout L;
    detail::add_physical_block(lp, L, sys_, own_, sc_, noise_, t, s);
    L.energy = lp.add_column(0.0, 0.0, e_max_, "e");
    std::vector<lp::Term> en{{L.energy, 1.0}};
    for (int c : L.thermal) en.push_back({c, -1.0});
    for (std::size_t k = 0; k < L.turbine.size(); ++k)
      en.push_back({L.turbine[k], -sys_.hydros[own_.hydros[k]].production_factor});
    for (int c : L.renewable) en.push_back({c, -1.0});
    L.energy_row = lp.add_row(std::move(en), lp::Sense::Equal, 0.0, "energy");

    if (const auto* p = std::get_if<PriceTakerRevenue>(&revenue_)) {
      const double pi = p->prices(t, s);
      lp.set_cost(L.energy, -(pi + p->indifference_premium * std::max(1.0, std::abs(pi))));
      const double qf = contract_.quantity(t);
      lp.objective_constant = -(contract_.price * qf - pi * qf);
    } else {
      const auto& h = std::get<HullRevenue>(revenue_);
      add_hull_revenue(lp, h.hulls[static_cast<std::size_t>(t) * sc_.samples + s], L.energy);
    }
    return {std::move(lp), std::move(L)};
  }

  // Stage revenue can never exceed these bounds, so minus their sum over the
  // remaining stages bounds the cost-to-go from below.
  void compute_floors() {
    const int T = sys_.stages;
    std::vector<double> max_rev(T, 0.0);
    for (int t = 0; t < T; ++t) {
      double best = 0.0;
      for (int s = 0; s < sc_.samples; ++s) {
        double r;
        if (const auto* p = std::get_if<PriceTakerRevenue>(&revenue_)) {
          const double pi = p->prices(t, s);
          const double qf = contract_.quantity(t);
          r = contract_.price * qf + pi * (e_max_ - qf) + p->indifference_premium * std::max(1.0, std::abs(pi)) * e_max_;
          r = std::max(r, contract_.price * qf - pi * qf);
        } else {
          r = std::get<HullRevenue>(revenue_).hulls[static_cast<std::size_t>(t) * sc_.samples + s].max_revenue();
        }
        best = std::max(best, r);
      }
      max_rev[t] = best;
    }
    floors_.assign(T, 0.0);
    double acc = 0.0;
    for (int t = T - 1; t >= 0; --t) {
      floors_[t] = -acc - 1.0;
      acc += max_rev[t];
    }
  }

  const SystemModel& sys_;
  const ScenarioSet& sc_;
  int agent_;
  Ownership own_;
  Grid3 noise_;
  RevenueRepresentation revenue_;
  Contract contract_;
  double e_max_ = 0.0;
  std::vector<double> floors_;
  StageLayout layout_;
};

/// Energy produced by the plants in `plants` (a subset of the model's
/// ownership) in one simulated stage.
inline double generation_of(const SystemModel& sys, const Ownership& model_scope, const StageLayout& L,
                            const std::vector<double>& primal, const Ownership& plants) {
  auto in = [](const std::vector<int>& v, int x) { return std::find(v.begin(), v.end(), x) != v.end(); };
  double e = 0.0;
  for (std::size_t k = 0; k < model_scope.thermals.size(); ++k)
    if (in(plants.thermals, model_scope.thermals[k])) e += primal[L.thermal[k]];
  for (std::size_t k = 0; k < model_scope.hydros.size(); ++k)
    if (in(plants.hydros, model_scope.hydros[k]))
      e += sys.hydros[model_scope.hydros[k]].production_factor * primal[L.turbine[k]];
  for (std::size_t k = 0; k < model_scope.renewables.size(); ++k)
    if (in(plants.renewables, model_scope.renewables[k])) e += primal[L.renewable[k]];
  return e;
}

/// Physical decisions per (stage, sample, plant).
struct DispatchTable {
  Grid3 thermal;    // MWh
  Grid3 turbine;    // hm3
  Grid3 spill;      // hm3
  Grid3 storage;    // hm3, end of stage
  Grid3 renewable;  // MWh

  DispatchTable() = default;
  DispatchTable(const SystemModel& sys, int samples)
      : thermal(sys.stages, samples, static_cast<int>(sys.thermals.size())),
        turbine(sys.stages, samples, static_cast<int>(sys.hydros.size())),
        spill(sys.stages, samples, static_cast<int>(sys.hydros.size())),
        storage(sys.stages, samples, static_cast<int>(sys.hydros.size())),
        renewable(sys.stages, samples, static_cast<int>(sys.renewables.size())) {}

  bool operator==(const DispatchTable&) const = default;

  /// Copies the decisions of the plants in `scope` from a simulation of a
  /// model with that scope and layout.
  void record(const Ownership& scope, const StageLayout& L, const sddp::SimulationResult& sim) {
    for (int t = 0; t < sim.stages; ++t)
      for (int s = 0; s < sim.samples; ++s) {
        const auto& x = sim.at(t, s).primal;
        for (std::size_t k = 0; k < scope.thermals.size(); ++k) thermal(t, s, scope.thermals[k]) = x[L.thermal[k]];
        for (std::size_t k = 0; k < scope.hydros.size(); ++k) {
          turbine(t, s, scope.hydros[k]) = x[L.turbine[k]];
          spill(t, s, scope.hydros[k]) = x[L.spill[k]];
          storage(t, s, scope.hydros[k]) = x[L.volume[k]];
        }
        for (std::size_t k = 0; k < scope.renewables.size(); ++k)
          renewable(t, s, scope.renewables[k]) = x[L.renewable[k]];
      }
  }

  /// Spilled share of total hydro outflow, in percent.
  double spillage_percent() const {
    double z = 0.0, out = 0.0;
    for (int t = 0; t < spill.stages(); ++t)
      for (int s = 0; s < spill.samples(); ++s)
        for (int j = 0; j < spill.entities(); ++j) {
          z += spill(t, s, j);
          out += spill(t, s, j) + turbine(t, s, j);
        }
    return out > 0.0 ? 100.0 * z / out : 0.0;
  }

  /// Mean end-of-stage storage relative to total capacity, in percent.
  double storage_percent(const SystemModel& sys) const {
    double cap = 0.0;
    for (const auto& h : sys.hydros) cap += h.max_storage;
    if (cap <= 0.0 || storage.stages() == 0 || storage.samples() == 0) return 0.0;
    double v = 0.0;
    for (int t = 0; t < storage.stages(); ++t)
      for (int s = 0; s < storage.samples(); ++s)
        for (int j = 0; j < storage.entities(); ++j) v += storage(t, s, j);
    return 100.0 * v / (cap * storage.stages() * storage.samples());
  }
};

inline void write_dispatch_csv(std::ostream& os, const SystemModel& sys, const DispatchTable& d) {
  os << "stage,sample,plant,kind,generation,turbine,spill,storage\n";
  const int T = d.thermal.stages();
  const int S = d.thermal.samples();
  for (int t = 0; t < T; ++t)
    for (int s = 0; s < S; ++s) {
      auto row = [&](const std::string& id, const char* kind, double g, double u, double z, double v) {
        os << t + 1 << ',' << s + 1 << ',' << id << ',' << kind << ',' << csv::num(g) << ',' << csv::num(u) << ','
           << csv::num(z) << ',' << csv::num(v) << '\n';
      };
      for (std::size_t j = 0; j < sys.hydros.size(); ++j) {
        const int k = static_cast<int>(j);
        row(sys.hydros[j].id, "hydro", sys.hydros[j].production_factor * d.turbine(t, s, k), d.turbine(t, s, k),
            d.spill(t, s, k), d.storage(t, s, k));
      }
      for (std::size_t j = 0; j < sys.thermals.size(); ++j)
        row(sys.thermals[j].id, "thermal", d.thermal(t, s, static_cast<int>(j)), 0.0, 0.0, 0.0);
      for (std::size_t j = 0; j < sys.renewables.size(); ++j)
        row(sys.renewables[j].id, "renewable", d.renewable(t, s, static_cast<int>(j)), 0.0, 0.0, 0.0);
    }
}

}  // namespace hydromarket
