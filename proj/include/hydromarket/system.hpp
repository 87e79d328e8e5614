#pragma once

// Physical and commercial description of a hydrothermal system.
//
// Units: storage and flows in hm3 (per stage), energy in MWh per stage,
// costs and prices in $/MWh. Hydro production is linear in turbine flow
// through the per-plant production factor.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace hydromarket {

/// Input that cannot be turned into a valid run (bad file, bad field).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Agent id reserved for the artificial deficit (load shedding) generator.
inline constexpr int kDeficitAgentId = std::numeric_limits<int>::max();

struct HydroPlant {
  std::string id;
  int owner = 0;
  double max_storage = 0.0;        // hm3
  double max_turbine = 0.0;        // hm3 per stage
  double production_factor = 0.0;  // MWh per hm3
  std::vector<std::string> upstream;
  std::vector<double> ar_lags;                 // coefficient for lag 1, 2, ...
  double initial_storage = 0.0;                // hm3
  std::vector<double> initial_lagged_inflows;  // inflow at t-1, t-2, ...

  double max_energy() const { return production_factor * max_turbine; }
};

struct ThermalPlant {
  std::string id;
  int owner = 0;
  double cost = 0.0;            // $/MWh
  double max_generation = 0.0;  // MWh per stage
};

struct RenewablePlant {
  std::string id;
  int owner = 0;
  double capacity = 0.0;  // MWh per stage
};

struct DemandProfile {
  std::vector<double> demand;  // MWh per stage
  double deficit_cost = 0.0;   // $/MWh
};

enum class AgentKind { PriceTaker, PriceMaker };

struct Contract {
  double price = 0.0;               // P^F, $/MWh
  std::vector<double> quantities;   // Q^F per stage, MWh

  double quantity(int stage) const {
    return stage < static_cast<int>(quantities.size()) ? quantities[stage] : 0.0;
  }
};

struct Agent {
  int id = 0;
  AgentKind kind = AgentKind::PriceTaker;
  std::optional<Contract> contract;
};

/// Plant indices (into the system's plant vectors) owned by one agent.
struct Ownership {
  std::vector<int> hydros;
  std::vector<int> thermals;
  std::vector<int> renewables;

  bool empty() const { return hydros.empty() && thermals.empty() && renewables.empty(); }
};

struct SystemModel {
  int stages = 0;
  std::vector<HydroPlant> hydros;
  std::vector<ThermalPlant> thermals;
  std::vector<RenewablePlant> renewables;
  std::vector<Agent> agents;
  DemandProfile demand;

  int num_lags() const { return hydros.empty() ? 0 : static_cast<int>(hydros.front().ar_lags.size()); }

  double demand_at(int stage) const { return demand.demand.at(stage); }

  int hydro_index(const std::string& id) const {
    for (std::size_t j = 0; j < hydros.size(); ++j)
      if (hydros[j].id == id) return static_cast<int>(j);
    return -1;
  }

  const Agent* find_agent(int id) const {
    for (const auto& a : agents)
      if (a.id == id) return &a;
    return nullptr;
  }

  Agent* find_agent(int id) {
    for (auto& a : agents)
      if (a.id == id) return &a;
    return nullptr;
  }

  Ownership owned_by(int agent_id) const {
    Ownership o;
    for (std::size_t j = 0; j < hydros.size(); ++j)
      if (hydros[j].owner == agent_id) o.hydros.push_back(static_cast<int>(j));
    for (std::size_t j = 0; j < thermals.size(); ++j)
      if (thermals[j].owner == agent_id) o.thermals.push_back(static_cast<int>(j));
    for (std::size_t j = 0; j < renewables.size(); ++j)
      if (renewables[j].owner == agent_id) o.renewables.push_back(static_cast<int>(j));
    return o;
  }

  /// Upper bound on the energy an agent can offer in one stage.
  double agent_capacity(int agent_id) const {
    double cap = 0.0;
    for (const auto& h : hydros)
      if (h.owner == agent_id) cap += h.max_energy();
    for (const auto& g : thermals)
      if (g.owner == agent_id) cap += g.max_generation;
    for (const auto& r : renewables)
      if (r.owner == agent_id) cap += r.capacity;
    return cap;
  }

  /// Upstream plant indices for each hydro (unresolved ids are skipped).
  std::vector<std::vector<int>> upstream_indices() const {
    std::vector<std::vector<int>> up(hydros.size());
    for (std::size_t j = 0; j < hydros.size(); ++j)
      for (const auto& u : hydros[j].upstream) {
        const int k = hydro_index(u);
        if (k >= 0) up[j].push_back(k);
      }
    return up;
  }

  /// Agent ids in ascending order.
  std::vector<int> agent_ids() const {
    std::vector<int> ids;
    for (const auto& a : agents) ids.push_back(a.id);
    std::sort(ids.begin(), ids.end());
    return ids;
  }

  double max_thermal_cost() const {
    double c = 0.0;
    for (const auto& g : thermals) c = std::max(c, g.cost);
    return c;
  }
};

struct Violation {
  std::string entity;
  std::string rule;
};

namespace detail {

inline bool cascade_has_cycle(const std::vector<std::vector<int>>& up) {
  // 0 = unvisited, 1 = on stack, 2 = done
  std::vector<int> mark(up.size(), 0);
  std::vector<std::pair<int, std::size_t>> stack;
  for (std::size_t s = 0; s < up.size(); ++s) {
    if (mark[s]) continue;
    stack.push_back({static_cast<int>(s), 0});
    mark[s] = 1;
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < up[node].size()) {
        const int child = up[node][next++];
        if (mark[child] == 1) return true;
        if (mark[child] == 0) {
          mark[child] = 1;
          stack.push_back({child, 0});
        }
      } else {
        mark[node] = 2;
        stack.pop_back();
      }
    }
  }
  return false;
}

/// Connected components of the undirected cascade graph.
inline std::vector<int> cascade_components(const std::vector<std::vector<int>>& up) {
  std::vector<int> parent(up.size());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t j = 0; j < up.size(); ++j)
    for (int k : up[j]) parent[find(static_cast<int>(j))] = find(k);
  std::vector<int> comp(up.size());
  for (std::size_t j = 0; j < up.size(); ++j) comp[j] = find(static_cast<int>(j));
  return comp;
}

}  // namespace detail

/// Checks every structural invariant of the model. Pure; an empty result
/// means the system is usable.
inline std::vector<Violation> validate(const SystemModel& sys) {
  std::vector<Violation> out;
  auto fail = [&](std::string entity, std::string rule) { out.push_back({std::move(entity), std::move(rule)}); };

  if (sys.stages < 1) fail("system", "at least one stage required");
  if (static_cast<int>(sys.demand.demand.size()) != sys.stages)
    fail("demand", "demand profile length must equal stage count");
  for (std::size_t t = 0; t < sys.demand.demand.size(); ++t)
    if (!(sys.demand.demand[t] >= 0.0)) fail("demand[" + std::to_string(t) + "]", "demand must be nonnegative");
  if (sys.hydros.empty() && sys.thermals.empty() && sys.renewables.empty())
    fail("system", "at least one generator required");
  if (!(sys.demand.deficit_cost > sys.max_thermal_cost()))
    fail("demand", "deficit cost must exceed every thermal cost");

  std::set<std::string> ids;
  auto unique_id = [&](const std::string& id) {
    if (id.empty()) fail("plant", "empty plant id");
    else if (!ids.insert(id).second) fail(id, "duplicate plant id");
  };
  std::set<int> agent_ids;
  for (const auto& a : sys.agents) {
    if (a.id == kDeficitAgentId) fail("agent " + std::to_string(a.id), "agent id reserved for the deficit plant");
    if (!agent_ids.insert(a.id).second) fail("agent " + std::to_string(a.id), "duplicate agent id");
    if (a.contract) {
      if (!(a.contract->price >= 0.0)) fail("agent " + std::to_string(a.id), "contract price must be nonnegative");
      if (static_cast<int>(a.contract->quantities.size()) != sys.stages)
        fail("agent " + std::to_string(a.id), "contract quantities must cover every stage");
      for (double q : a.contract->quantities)
        if (!(q >= 0.0)) fail("agent " + std::to_string(a.id), "contract quantity must be nonnegative");
    }
  }
  auto owner_ok = [&](const std::string& id, int owner) {
    if (!agent_ids.count(owner)) fail(id, "owner " + std::to_string(owner) + " is not a known agent");
  };

  const std::size_t lags = sys.hydros.empty() ? 0 : sys.hydros.front().ar_lags.size();
  for (const auto& h : sys.hydros) {
    unique_id(h.id);
    owner_ok(h.id, h.owner);
    if (!(h.max_storage >= 0.0)) fail(h.id, "max storage must be nonnegative");
    if (!(h.max_turbine >= 0.0)) fail(h.id, "max turbine flow must be nonnegative");
    if (!(h.production_factor >= 0.0)) fail(h.id, "production factor must be nonnegative");
    if (!(h.initial_storage >= 0.0 && h.initial_storage <= h.max_storage))
      fail(h.id, "initial storage must lie within [0, max storage]");
    if (h.ar_lags.size() != lags) fail(h.id, "autoregressive order must be uniform across hydros");
    if (h.initial_lagged_inflows.size() != h.ar_lags.size())
      fail(h.id, "one initial lagged inflow required per autoregressive lag");
    for (const auto& u : h.upstream)
      if (sys.hydro_index(u) < 0) fail(h.id, "upstream plant " + u + " does not exist");
  }
  for (const auto& g : sys.thermals) {
    unique_id(g.id);
    owner_ok(g.id, g.owner);
    if (!(g.cost >= 0.0)) fail(g.id, "thermal cost must be nonnegative");
    if (!(g.max_generation >= 0.0)) fail(g.id, "thermal capacity must be nonnegative");
  }
  for (const auto& r : sys.renewables) {
    unique_id(r.id);
    owner_ok(r.id, r.owner);
    if (!(r.capacity >= 0.0)) fail(r.id, "renewable capacity must be nonnegative");
  }

  const auto up = sys.upstream_indices();
  if (detail::cascade_has_cycle(up)) fail("cascade", "cascade graph cyclic");
  const auto comp = detail::cascade_components(up);
  std::map<int, int> comp_owner;
  for (std::size_t j = 0; j < sys.hydros.size(); ++j) {
    auto [it, inserted] = comp_owner.emplace(comp[j], sys.hydros[j].owner);
    if (!inserted && it->second != sys.hydros[j].owner)
      fail(sys.hydros[j].id, "shared cascade: plants in one cascade must have a single owner");
  }
  return out;
}

/// Sum of squared market shares. Shares must sum to one.
inline double herfindahl_index(std::span<const double> shares) {
  double sum = 0.0;
  double hhi = 0.0;
  for (double s : shares) {
    if (!(s >= 0.0)) throw std::invalid_argument("herfindahl_index: negative share");
    sum += s;
    hhi += s * s;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("herfindahl_index: shares must sum to 1");
  return hhi;
}

/// Per-agent share of installed capacity, ordered by ascending agent id.
inline std::vector<double> capacity_shares(const SystemModel& sys) {
  std::vector<double> caps;
  double total = 0.0;
  for (int id : sys.agent_ids()) {
    caps.push_back(sys.agent_capacity(id));
    total += caps.back();
  }
  if (total <= 0.0) throw std::invalid_argument("capacity_shares: system has no capacity");
  for (double& c : caps) c /= total;
  return caps;
}

inline double herfindahl_index(const SystemModel& sys) {
  const auto shares = capacity_shares(sys);
  return herfindahl_index(std::span<const double>(shares));
}

// ---------------------------------------------------------------------------
// JSON

inline const char* to_string(AgentKind k) { return k == AgentKind::PriceMaker ? "price_maker" : "price_taker"; }

inline AgentKind parse_agent_kind(const std::string& s) {
  if (s == "price_maker") return AgentKind::PriceMaker;
  if (s == "price_taker") return AgentKind::PriceTaker;
  throw ConfigError("unknown agent kind '" + s + "'");
}

inline SystemModel system_from_json(const nlohmann::json& j) {
  try {
    SystemModel sys;
    sys.stages = j.at("stages").get<int>();
    const auto& d = j.at("demand");
    if (d.is_array()) sys.demand.demand = d.get<std::vector<double>>();
    else sys.demand.demand.assign(std::max(sys.stages, 0), d.get<double>());
    sys.demand.deficit_cost = j.at("deficit_cost").get<double>();

    for (const auto& h : j.value("hydros", nlohmann::json::array())) {
      HydroPlant p;
      p.id = h.at("id").get<std::string>();
      p.owner = h.at("owner").get<int>();
      p.max_storage = h.at("max_storage").get<double>();
      p.max_turbine = h.at("max_turbine").get<double>();
      p.production_factor = h.at("production_factor").get<double>();
      p.upstream = h.value("upstream", std::vector<std::string>{});
      p.ar_lags = h.value("ar_lags", std::vector<double>{});
      p.initial_storage = h.at("initial_storage").get<double>();
      p.initial_lagged_inflows = h.value("initial_lagged_inflows", std::vector<double>{});
      sys.hydros.push_back(std::move(p));
    }
    for (const auto& g : j.value("thermals", nlohmann::json::array())) {
      sys.thermals.push_back({g.at("id").get<std::string>(), g.at("owner").get<int>(), g.at("cost").get<double>(),
                              g.at("max_generation").get<double>()});
    }
    for (const auto& r : j.value("renewables", nlohmann::json::array())) {
      sys.renewables.push_back(
          {r.at("id").get<std::string>(), r.at("owner").get<int>(), r.at("capacity").get<double>()});
    }
    for (const auto& a : j.value("agents", nlohmann::json::array())) {
      Agent ag;
      ag.id = a.at("id").get<int>();
      ag.kind = parse_agent_kind(a.value("kind", std::string("price_taker")));
      sys.agents.push_back(ag);
    }
    for (const auto& c : j.value("contracts", nlohmann::json::array())) {
      const int id = c.at("agent").get<int>();
      Agent* ag = sys.find_agent(id);
      if (!ag) throw ConfigError("contract references unknown agent " + std::to_string(id));
      Contract k;
      k.price = c.at("price").get<double>();
      const auto& q = c.at("quantities");
      if (q.is_array()) k.quantities = q.get<std::vector<double>>();
      else k.quantities.assign(std::max(sys.stages, 0), q.get<double>());
      ag->contract = std::move(k);
    }
    return sys;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("system file: ") + e.what());
  }
}

inline nlohmann::json system_to_json(const SystemModel& sys) {
  nlohmann::json j;
  j["stages"] = sys.stages;
  j["demand"] = sys.demand.demand;
  j["deficit_cost"] = sys.demand.deficit_cost;
  j["hydros"] = nlohmann::json::array();
  for (const auto& h : sys.hydros) {
    j["hydros"].push_back({{"id", h.id},
                           {"owner", h.owner},
                           {"max_storage", h.max_storage},
                           {"max_turbine", h.max_turbine},
                           {"production_factor", h.production_factor},
                           {"upstream", h.upstream},
                           {"ar_lags", h.ar_lags},
                           {"initial_storage", h.initial_storage},
                           {"initial_lagged_inflows", h.initial_lagged_inflows}});
  }
  j["thermals"] = nlohmann::json::array();
  for (const auto& g : sys.thermals)
    j["thermals"].push_back({{"id", g.id}, {"owner", g.owner}, {"cost", g.cost}, {"max_generation", g.max_generation}});
  j["renewables"] = nlohmann::json::array();
  for (const auto& r : sys.renewables)
    j["renewables"].push_back({{"id", r.id}, {"owner", r.owner}, {"capacity", r.capacity}});
  j["agents"] = nlohmann::json::array();
  j["contracts"] = nlohmann::json::array();
  for (const auto& a : sys.agents) {
    j["agents"].push_back({{"id", a.id}, {"kind", to_string(a.kind)}});
    if (a.contract)
      j["contracts"].push_back({{"agent", a.id}, {"price", a.contract->price}, {"quantities", a.contract->quantities}});
  }
  return j;
}

inline SystemModel load_system(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open system file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("system file " + path + ": " + e.what());
  }
  return system_from_json(j);
}

}  // namespace hydromarket
