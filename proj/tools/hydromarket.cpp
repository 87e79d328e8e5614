// Command-line front end: centralized dispatch, equilibrium search, one-shot
// market clearing and revenue-curve export.
//
// Exit codes: 0 success, 1 configuration error, 2 numerical failure,
// 3 equilibrium not converged (outputs are still written).

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <type_traits>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "hydromarket/equilibrium.hpp"
#include "json.hpp"

using namespace hydromarket;
namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitNumerical = 2;
constexpr int kExitNotConverged = 3;

struct RunConfig {
  std::string system;
  std::string noise;
  std::string inflows;
  std::string renewables;
  int samples = 20;
  std::uint64_t seed = 1;
  int stages = 0;  // 0 keeps the system's horizon
  int workers = default_workers();
  std::string out;  // empty: "results" for runs, stdout for clear/curve
  int sddp_iterations = 30;
  int forward_passes = 1;
  double stall_tolerance = 1e-8;
  int markov_states = 3;
  double tolerance = 0.01;
  int max_outer_iterations = 10;
  std::optional<double> contract_level;
  double indifference_premium = 1e-6;
  // clear / curve
  std::string bids;
  double demand = 0.0;
  double deficit_cost = 1e4;
  double e_max = 0.0;
  double contract_price = 0.0;
  double contract_quantity = 0.0;
};

// Options are first read from --config, then any flag given on the command
// line overrides the file. JSON keys are the flag names with '-' -> '_'.
struct Flag {
  std::string name;
  std::function<void(RunConfig&, const nlohmann::json&)> from_json;
  std::function<void(RunConfig&, const RunConfig&)> copy;
};

std::string json_key(std::string flag) {
  for (char& c : flag)
    if (c == '-') c = '_';
  return flag;
}

template <class T>
void bind_flag(CLI::App& app, std::vector<Flag>& flags, RunConfig& cfg, const char* name, T RunConfig::*member,
          const std::string& help) {
  auto* opt = app.add_option(std::string("--") + name, cfg.*member, help);
  if constexpr (!std::is_same_v<T, std::optional<double>>) opt->capture_default_str();
  flags.push_back({name,
                   [member](RunConfig& c, const nlohmann::json& v) {
                     if constexpr (std::is_same_v<T, std::optional<double>>) c.*member = v.get<double>();
                     else c.*member = v.get<T>();
                   },
                   [member](RunConfig& to, const RunConfig& from) { to.*member = from.*member; }});
}

void apply_config(const CLI::App& sub, const std::vector<Flag>& flags, const std::string& path, RunConfig& cfg) {
  if (path.empty()) return;
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config file " + path + ": expected a JSON object");
  const RunConfig given = cfg;
  for (const auto& f : flags) {
    const auto key = json_key(f.name);
    if (!j.contains(key)) continue;
    try {
      f.from_json(cfg, j.at(key));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config file " + path + ": key '" + key + "': " + e.what());
    }
  }
  for (const auto& f : flags)
    if (sub.count("--" + f.name) > 0) f.copy(cfg, given);
}

SystemModel load_checked_system(const RunConfig& cfg) {
  if (cfg.system.empty()) throw ConfigError("--system is required");
  auto sys = load_system(cfg.system);
  if (cfg.stages > 0) {
    if (cfg.stages > sys.stages)
      throw ConfigError("--stages " + std::to_string(cfg.stages) + " exceeds the system horizon of " +
                        std::to_string(sys.stages));
    sys.stages = cfg.stages;
    sys.demand.demand.resize(cfg.stages);
  }
  const auto bad = validate(sys);
  if (!bad.empty()) {
    std::ostringstream msg;
    msg << "invalid system " << cfg.system << ":";
    for (const auto& v : bad) msg << "\n  " << v.entity << ": " << v.rule;
    throw ConfigError(msg.str());
  }
  return sys;
}

Grid3 load_table(const std::string& path, int stages, const std::vector<std::string>& names) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario table: " + path);
  try {
    return read_scenario_table(in, stages, names);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  } catch (const std::runtime_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

ScenarioSet load_scenarios(const SystemModel& sys, const RunConfig& cfg) {
  if (!cfg.inflows.empty()) {
    ScenarioSet sc;
    sc.stages = sys.stages;
    sc.inflows = load_table(cfg.inflows, sys.stages, hydro_names(sys));
    sc.samples = sc.inflows.samples();
    if (!cfg.renewables.empty()) {
      sc.renewables = load_table(cfg.renewables, sys.stages, renewable_names(sys));
      if (!sys.renewables.empty() && sc.renewables.samples() != sc.samples)
        throw ConfigError("inflow and renewable tables have different sample counts");
    }
    if (sc.renewables.samples() != sc.samples) {
      sc.renewables = Grid3(sys.stages, sc.samples, static_cast<int>(sys.renewables.size()));
      for (int t = 0; t < sys.stages; ++t)
        for (int s = 0; s < sc.samples; ++s)
          for (std::size_t j = 0; j < sys.renewables.size(); ++j)
            sc.renewables(t, s, static_cast<int>(j)) = sys.renewables[j].capacity;
    }
    if (sc.samples < 1) throw ConfigError(cfg.inflows + ": no samples");
    return sc;
  }
  if (cfg.samples < 1) throw ConfigError("--samples must be at least 1");
  NoiseModel noise = NoiseModel::zero(sys);
  if (!cfg.noise.empty()) {
    std::ifstream in(cfg.noise);
    if (!in) throw ConfigError("cannot open noise file: " + cfg.noise);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("noise file " + cfg.noise + ": " + e.what());
    }
    noise = noise_from_json(sys, j);
  }
  return generate_scenarios(sys, noise, cfg.samples, cfg.seed);
}

sddp::Options training_options(const RunConfig& cfg) {
  sddp::Options o;
  o.max_iterations = cfg.sddp_iterations;
  o.forward_passes = cfg.forward_passes;
  o.seed = cfg.seed;
  o.bound_stall_tolerance = cfg.stall_tolerance;
  o.workers = cfg.workers;
  return o;
}

void write_scenarios(const fs::path& dir, const SystemModel& sys, const ScenarioSet& sc) {
  csv::write_atomic(dir / "inflows.csv",
                    [&](std::ostream& os) { write_scenario_table(os, sc.inflows, hydro_names(sys)); });
  csv::write_atomic(dir / "renewables.csv",
                    [&](std::ostream& os) { write_scenario_table(os, sc.renewables, renewable_names(sys)); });
}

int run_centralized(const RunConfig& cfg) {
  const auto sys = load_checked_system(cfg);
  const auto sc = load_scenarios(sys, cfg);
  const auto res = centralized_operation(sys, sc, training_options(cfg));
  const fs::path dir(cfg.out.empty() ? "results" : cfg.out);
  write_centralized_results(dir, sys, res);
  write_scenarios(dir, sys, sc);
  std::cout << "mean spot price " << csv::num(res.prices.mean()) << " $/MWh, lower bound "
            << csv::num(res.lower_bound) << ", mean simulated cost " << csv::num(res.simulation.mean_cost())
            << "\nresults written to " << dir.string() << '\n';
  return 0;
}

int run_equilibrium_cmd(const RunConfig& cfg) {
  auto sys = load_checked_system(cfg);
  const auto sc = load_scenarios(sys, cfg);
  EquilibriumOptions opt;
  opt.max_outer_iterations = cfg.max_outer_iterations;
  opt.tolerance = cfg.tolerance;
  opt.markov_states = cfg.markov_states;
  opt.seed = cfg.seed;
  opt.workers = cfg.workers;
  opt.indifference_premium = cfg.indifference_premium;
  opt.training = training_options(cfg);
  if (cfg.contract_level) {
    const auto central = centralized_operation(sys, sc, [&] {
      auto o = opt.training;
      o.seed = detail::mix_seed(opt.seed, 0, 0);
      return o;
    }());
    sys = with_contracts(std::move(sys), contract_from_centralized(central, *cfg.contract_level));
  }
  const auto rep = run_equilibrium(sys, sc, opt);
  const fs::path dir(cfg.out.empty() ? "results" : cfg.out);
  write_equilibrium_results(dir, sys, rep);
  write_scenarios(dir, sys, sc);
  std::cout << (rep.converged ? "converged" : "not converged") << " after " << rep.iterations
            << " iterations; mean spot price " << csv::num(rep.mean_price) << " $/MWh (centralized "
            << csv::num(rep.centralized.prices.mean()) << ")\nresults written to " << dir.string() << '\n';
  return rep.converged ? 0 : kExitNotConverged;
}

std::vector<Bid> load_bids(const std::string& path) {
  if (path.empty()) throw ConfigError("--bids is required");
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open bids file: " + path);
  try {
    return read_bids_csv(in);
  } catch (const std::runtime_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void emit(const std::string& out, const std::function<void(std::ostream&)>& body) {
  if (out.empty() || out == "-") {
    body(std::cout);
  } else {
    const fs::path p(out);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    csv::write_atomic(p, body);
  }
}

int run_clear(const RunConfig& cfg) {
  const auto bids = load_bids(cfg.bids);
  if (!(cfg.demand >= 0.0)) throw ConfigError("--demand must be nonnegative");
  for (const auto& b : bids)
    if (b.quantity < 0.0 || b.price < 0.0) throw ConfigError(cfg.bids + ": negative price or quantity");
  const auto res = clear_with_deficit(bids, cfg.demand, cfg.deficit_cost);
  double deficit = cfg.demand;
  for (double q : res.accepted) deficit -= q;
  emit(cfg.out, [&](std::ostream& os) {
    os << "agent,price,quantity,accepted\n";
    for (std::size_t i = 0; i < bids.size(); ++i)
      os << bids[i].agent << ',' << csv::num(bids[i].price) << ',' << csv::num(bids[i].quantity) << ','
         << csv::num(res.accepted[i]) << '\n';
    os << "deficit," << csv::num(cfg.deficit_cost) << ',' << csv::num(cfg.demand) << ','
       << csv::num(std::max(deficit, 0.0)) << '\n';
  });
  std::cerr << "spot price " << csv::num(res.price) << " $/MWh\n";
  return 0;
}

int run_curve(const RunConfig& cfg) {
  const auto others = load_bids(cfg.bids);
  if (!(cfg.e_max > 0.0)) throw ConfigError("--e-max must be positive");
  const auto curve =
      revenue_curve(others, cfg.demand, {cfg.contract_price, cfg.contract_quantity}, cfg.e_max, cfg.deficit_cost);
  const auto hull = concave_hull(curve);
  emit(cfg.out, [&](std::ostream& os) { write_curve_csv(os, curve, hull); });
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hydrothermal bid-based market simulator"};
  app.require_subcommand(1);
  RunConfig cfg;
  std::string config_path;

  struct Sub {
    CLI::App* app;
    std::vector<Flag> flags;
  };
  std::vector<Sub> subs;

  auto add_common = [&](CLI::App* sub, std::vector<Flag>& flags) {
    sub->add_option("--config", config_path, "JSON file with option values; command-line flags take precedence");
    bind_flag(*sub, flags, cfg, "seed", &RunConfig::seed, "seed for every random draw");
    bind_flag(*sub, flags, cfg, "workers", &RunConfig::workers, "maximum worker threads");
    bind_flag(*sub, flags, cfg, "out", &RunConfig::out, "output directory (file for clear/curve, '-' for stdout)");
  };
  auto add_model = [&](CLI::App* sub, std::vector<Flag>& flags) {
    bind_flag(*sub, flags, cfg, "system", &RunConfig::system, "system JSON file");
    bind_flag(*sub, flags, cfg, "noise", &RunConfig::noise, "inflow noise JSON file (zero noise when omitted)");
    bind_flag(*sub, flags, cfg, "inflows", &RunConfig::inflows, "inflow scenario CSV (stage,sample,entity,value) instead of generation");
    bind_flag(*sub, flags, cfg, "renewables", &RunConfig::renewables, "renewable scenario CSV; full capacity when omitted");
    bind_flag(*sub, flags, cfg, "samples", &RunConfig::samples, "number of generated scenarios");
    bind_flag(*sub, flags, cfg, "stages", &RunConfig::stages, "truncate the horizon to this many stages (0 keeps it)");
    bind_flag(*sub, flags, cfg, "sddp-iterations", &RunConfig::sddp_iterations, "SDDP iteration cap per training");
    bind_flag(*sub, flags, cfg, "forward-passes", &RunConfig::forward_passes, "forward passes per SDDP iteration");
    bind_flag(*sub, flags, cfg, "stall-tolerance", &RunConfig::stall_tolerance, "relative lower-bound improvement that stops SDDP");
  };

  {
    Sub s{app.add_subcommand("centralized", "train and simulate the cost-minimizing dispatch"), {}};
    add_common(s.app, s.flags);
    add_model(s.app, s.flags);
    subs.push_back(std::move(s));
  }
  {
    Sub s{app.add_subcommand("equilibrium", "iterate agents' best responses towards a market equilibrium"), {}};
    add_common(s.app, s.flags);
    add_model(s.app, s.flags);
    bind_flag(*s.app, s.flags, cfg, "markov-states", &RunConfig::markov_states, "Markov states per stage");
    bind_flag(*s.app, s.flags, cfg, "tolerance", &RunConfig::tolerance, "convergence tolerance relative to centralized bids");
    bind_flag(*s.app, s.flags, cfg, "max-outer-iterations", &RunConfig::max_outer_iterations, "cap on diagonalization iterations");
    bind_flag(*s.app, s.flags, cfg, "contract-level", &RunConfig::contract_level,
                  "forward contracts at this fraction of centralized generation (overrides the system file)");
    bind_flag(*s.app, s.flags, cfg, "indifference-premium", &RunConfig::indifference_premium,
         "relative price bonus that makes indifferent price takers produce");
    subs.push_back(std::move(s));
  }
  {
    Sub s{app.add_subcommand("clear", "clear one market from a bids CSV (agent,price,quantity)"), {}};
    add_common(s.app, s.flags);
    bind_flag(*s.app, s.flags, cfg, "bids", &RunConfig::bids, "bids CSV");
    bind_flag(*s.app, s.flags, cfg, "demand", &RunConfig::demand, "demand (MWh)");
    bind_flag(*s.app, s.flags, cfg, "deficit-cost", &RunConfig::deficit_cost, "price of unserved energy");
    subs.push_back(std::move(s));
  }
  {
    Sub s{app.add_subcommand("curve", "revenue curve and concave hull of an offer against other bids"), {}};
    add_common(s.app, s.flags);
    bind_flag(*s.app, s.flags, cfg, "bids", &RunConfig::bids, "other agents' bids CSV");
    bind_flag(*s.app, s.flags, cfg, "demand", &RunConfig::demand, "demand (MWh)");
    bind_flag(*s.app, s.flags, cfg, "deficit-cost", &RunConfig::deficit_cost, "price of unserved energy");
    bind_flag(*s.app, s.flags, cfg, "e-max", &RunConfig::e_max, "largest offer (MWh)");
    bind_flag(*s.app, s.flags, cfg, "contract-price", &RunConfig::contract_price, "forward contract price P^F");
    bind_flag(*s.app, s.flags, cfg, "contract-quantity", &RunConfig::contract_quantity, "forward contract quantity Q^F");
    subs.push_back(std::move(s));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    for (auto& s : subs) {
      if (!s.app->parsed()) continue;
      apply_config(*s.app, s.flags, config_path, cfg);
      const std::string name = s.app->get_name();
      if (name == "centralized") return run_centralized(cfg);
      if (name == "equilibrium") return run_equilibrium_cmd(cfg);
      if (name == "clear") return run_clear(cfg);
      if (name == "curve") return run_curve(cfg);
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const lp::LpError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const sddp::SddpError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const MarketError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumerical;
  }
  return kExitConfig;
}
