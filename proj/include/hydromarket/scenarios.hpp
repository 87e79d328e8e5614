#pragma once

// Uncertainty realizations indexed by stage x sample: hydro inflows from a
// periodic autoregressive process, renewable availability, and optionally
// exogenous spot prices.

#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "csv.hpp"
#include "json.hpp"
#include "random.hpp"
#include "system.hpp"

namespace hydromarket {

/// Dense stage x sample x entity array.
class Grid3 {
 public:
  Grid3() = default;
  Grid3(int stages, int samples, int entities, double fill = 0.0)
      : stages_(stages), samples_(samples), entities_(entities),
        data_(static_cast<std::size_t>(stages) * samples * entities, fill) {}

  double& operator()(int t, int s, int j) { return data_[index(t, s, j)]; }
  double operator()(int t, int s, int j) const { return data_[index(t, s, j)]; }

  int stages() const { return stages_; }
  int samples() const { return samples_; }
  int entities() const { return entities_; }

  bool operator==(const Grid3&) const = default;

 private:
  std::size_t index(int t, int s, int j) const {
    return (static_cast<std::size_t>(t) * samples_ + s) * entities_ + j;
  }
  int stages_ = 0;
  int samples_ = 0;
  int entities_ = 0;
  std::vector<double> data_;
};

/// Dense stage x sample array.
class Grid2 {
 public:
  Grid2() = default;
  Grid2(int stages, int samples, double fill = 0.0)
      : stages_(stages), samples_(samples), data_(static_cast<std::size_t>(stages) * samples, fill) {}

  double& operator()(int t, int s) { return data_[static_cast<std::size_t>(t) * samples_ + s]; }
  double operator()(int t, int s) const { return data_[static_cast<std::size_t>(t) * samples_ + s]; }

  int stages() const { return stages_; }
  int samples() const { return samples_; }

  double mean() const {
    if (data_.empty()) return 0.0;
    double m = 0.0;
    for (double v : data_) m += v;
    return m / static_cast<double>(data_.size());
  }

  bool operator==(const Grid2&) const = default;

 private:
  int stages_ = 0;
  int samples_ = 0;
  std::vector<double> data_;
};

struct ScenarioSet {
  int stages = 0;
  int samples = 0;
  Grid3 inflows;                // [t][s][hydro], hm3 per stage
  Grid3 renewables;             // [t][s][renewable], MWh per stage
  std::optional<Grid2> prices;  // [t][s], $/MWh

  bool operator==(const ScenarioSet&) const = default;
};

enum class NoiseFamily { LogNormal, Normal };

struct NoiseParams {
  double mean = 0.0;
  double std = 0.0;
};

/// Per-hydro, per-season noise parameters. The season of stage t is
/// t mod (number of seasons given for that hydro); twelve seasons give a
/// monthly periodic model.
struct NoiseModel {
  NoiseFamily family = NoiseFamily::LogNormal;
  std::vector<std::vector<NoiseParams>> params;  // [hydro][season]

  const NoiseParams& at(int hydro, int stage) const {
    const auto& p = params.at(hydro);
    return p[static_cast<std::size_t>(stage) % p.size()];
  }

  double draw(int hydro, int stage, Rng& rng) const {
    const auto& p = at(hydro, stage);
    const double z = rng.normal();
    if (p.std == 0.0) return p.mean;
    if (family == NoiseFamily::Normal) return p.mean + p.std * z;
    const double s2 = std::log(1.0 + (p.std * p.std) / (p.mean * p.mean));
    const double mu = std::log(p.mean) - 0.5 * s2;
    return std::exp(mu + std::sqrt(s2) * z);
  }

  static NoiseModel zero(const SystemModel& sys) {
    NoiseModel m;
    m.params.assign(sys.hydros.size(), std::vector<NoiseParams>{NoiseParams{}});
    return m;
  }
};

/// One step of the autoregressive inflow recursion, truncated at zero.
/// prev_lags[l] is the inflow l+1 stages back.
inline double sample_inflow(std::span<const double> coefficients, std::span<const double> prev_lags, double noise) {
  if (coefficients.size() != prev_lags.size())
    throw std::invalid_argument("sample_inflow: lag vector length does not match autoregressive order");
  double a = noise;
  for (std::size_t l = 0; l < coefficients.size(); ++l) a += coefficients[l] * prev_lags[l];
  return a > 0.0 ? a : 0.0;
}

inline void check_noise_model(const SystemModel& sys, const NoiseModel& noise) {
  if (noise.params.size() != sys.hydros.size())
    throw ConfigError("noise model must list parameters for every hydro");
  for (std::size_t j = 0; j < noise.params.size(); ++j) {
    if (noise.params[j].empty()) throw ConfigError("noise model for " + sys.hydros[j].id + " has no seasons");
    for (const auto& p : noise.params[j]) {
      if (!(p.std >= 0.0)) throw ConfigError("noise std must be nonnegative for " + sys.hydros[j].id);
      if (noise.family == NoiseFamily::LogNormal && p.std > 0.0 && !(p.mean > 0.0))
        throw ConfigError("lognormal noise needs a positive mean for " + sys.hydros[j].id);
    }
  }
}

/// Draws |S| joint sample paths. Per sample, per stage: one noise draw per
/// hydro (in plant order) then one uniform per renewable. Renewables are
/// uniform on [0, capacity], independent across stages.
inline ScenarioSet generate_scenarios(const SystemModel& sys, const NoiseModel& noise, int samples,
                                      std::uint64_t seed) {
  if (samples < 1) throw std::invalid_argument("generate_scenarios: need at least one sample");
  check_noise_model(sys, noise);
  const int T = sys.stages;
  const int H = static_cast<int>(sys.hydros.size());
  const int R = static_cast<int>(sys.renewables.size());
  ScenarioSet sc;
  sc.stages = T;
  sc.samples = samples;
  sc.inflows = Grid3(T, samples, H);
  sc.renewables = Grid3(T, samples, R);

  Rng rng(seed);
  for (int s = 0; s < samples; ++s) {
    std::vector<std::vector<double>> lags(H);
    for (int j = 0; j < H; ++j) lags[j] = sys.hydros[j].initial_lagged_inflows;
    for (int t = 0; t < T; ++t) {
      for (int j = 0; j < H; ++j) {
        const double eps = noise.draw(j, t, rng);
        const double a = sample_inflow(sys.hydros[j].ar_lags, lags[j], eps);
        sc.inflows(t, s, j) = a;
        if (!lags[j].empty()) {
          for (std::size_t l = lags[j].size() - 1; l > 0; --l) lags[j][l] = lags[j][l - 1];
          lags[j][0] = a;
        }
      }
      for (int r = 0; r < R; ++r) sc.renewables(t, s, r) = rng.uniform() * sys.renewables[r].capacity;
    }
  }
  return sc;
}

/// Noise that reproduces each stored inflow path through the linear
/// recursion: eps = a_t - sum_l phi_l a_{t-l}, starting from the plant's
/// initial lags.
inline Grid3 inflow_noise(const SystemModel& sys, const ScenarioSet& sc) {
  const int H = static_cast<int>(sys.hydros.size());
  Grid3 eps(sc.stages, sc.samples, H);
  for (int s = 0; s < sc.samples; ++s) {
    for (int j = 0; j < H; ++j) {
      auto lags = sys.hydros[j].initial_lagged_inflows;
      const auto& phi = sys.hydros[j].ar_lags;
      for (int t = 0; t < sc.stages; ++t) {
        const double a = sc.inflows(t, s, j);
        double pred = 0.0;
        for (std::size_t l = 0; l < phi.size(); ++l) pred += phi[l] * lags[l];
        eps(t, s, j) = a - pred;
        if (!lags.empty()) {
          for (std::size_t l = lags.size() - 1; l > 0; --l) lags[l] = lags[l - 1];
          lags[0] = a;
        }
      }
    }
  }
  return eps;
}

/// A deterministic scenario set: one sample with the given inflows (per
/// stage, per hydro) and renewables at full capacity unless given.
inline ScenarioSet deterministic_scenarios(const SystemModel& sys, const std::vector<std::vector<double>>& inflows,
                                           const std::vector<std::vector<double>>& renewables = {}) {
  ScenarioSet sc;
  sc.stages = sys.stages;
  sc.samples = 1;
  sc.inflows = Grid3(sys.stages, 1, static_cast<int>(sys.hydros.size()));
  sc.renewables = Grid3(sys.stages, 1, static_cast<int>(sys.renewables.size()));
  for (int t = 0; t < sys.stages; ++t) {
    for (std::size_t j = 0; j < sys.hydros.size(); ++j) sc.inflows(t, 0, static_cast<int>(j)) = inflows.at(t).at(j);
    for (std::size_t r = 0; r < sys.renewables.size(); ++r)
      sc.renewables(t, 0, static_cast<int>(r)) =
          renewables.empty() ? sys.renewables[r].capacity : renewables.at(t).at(r);
  }
  return sc;
}

// ---------------------------------------------------------------------------
// Noise model JSON:
//   {"family": "lognormal"|"normal",
//    "hydros": {"<hydro id>": [{"mean": m, "std": s}, ...one per season]}}

inline NoiseModel noise_from_json(const SystemModel& sys, const nlohmann::json& j) {
  try {
    NoiseModel m;
    const auto fam = j.value("family", std::string("lognormal"));
    if (fam == "lognormal") m.family = NoiseFamily::LogNormal;
    else if (fam == "normal") m.family = NoiseFamily::Normal;
    else throw ConfigError("unknown noise family '" + fam + "'");
    const auto& hy = j.at("hydros");
    for (const auto& h : sys.hydros) {
      if (!hy.contains(h.id)) throw ConfigError("noise model lacks hydro " + h.id);
      std::vector<NoiseParams> seasons;
      for (const auto& p : hy.at(h.id)) seasons.push_back({p.at("mean").get<double>(), p.at("std").get<double>()});
      m.params.push_back(std::move(seasons));
    }
    check_noise_model(sys, m);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("noise file: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Scenario tables: "stage,sample,entity,value", stage and sample 1-based.

inline constexpr const char* kScenarioHeader = "stage,sample,entity,value";

inline void write_scenario_table(std::ostream& os, const Grid3& g, const std::vector<std::string>& names) {
  os << kScenarioHeader << '\n';
  for (int t = 0; t < g.stages(); ++t)
    for (int s = 0; s < g.samples(); ++s)
      for (int j = 0; j < g.entities(); ++j)
        os << t + 1 << ',' << s + 1 << ',' << names.at(j) << ',' << csv::num(g(t, s, j)) << '\n';
}

inline void write_price_table(std::ostream& os, const Grid2& g) {
  os << kScenarioHeader << '\n';
  for (int t = 0; t < g.stages(); ++t)
    for (int s = 0; s < g.samples(); ++s) os << t + 1 << ',' << s + 1 << ",system," << csv::num(g(t, s)) << '\n';
}

/// Reads a table; the sample count is inferred from the largest sample index
/// and every (stage, sample, entity) cell must be present exactly once.
inline Grid3 read_scenario_table(std::istream& in, int stages, const std::vector<std::string>& names) {
  const auto rows = csv::read(in, kScenarioHeader);
  std::map<std::string, int> idx;
  for (std::size_t j = 0; j < names.size(); ++j) idx[names[j]] = static_cast<int>(j);
  int samples = 0;
  for (const auto& r : rows) samples = std::max(samples, csv::to_int(r[1], "sample"));
  Grid3 g(stages, samples, static_cast<int>(names.size()), std::nan(""));
  for (const auto& r : rows) {
    const int t = csv::to_int(r[0], "stage") - 1;
    const int s = csv::to_int(r[1], "sample") - 1;
    auto it = idx.find(r[2]);
    if (it == idx.end()) throw ConfigError("scenario table: unknown entity '" + r[2] + "'");
    if (t < 0 || t >= stages || s < 0) throw ConfigError("scenario table: stage/sample out of range");
    g(t, s, it->second) = csv::to_double(r[3], "value");
  }
  for (int t = 0; t < stages; ++t)
    for (int s = 0; s < samples; ++s)
      for (int j = 0; j < g.entities(); ++j)
        if (std::isnan(g(t, s, j))) throw ConfigError("scenario table: missing cell");
  return g;
}

inline std::vector<std::string> hydro_names(const SystemModel& sys) {
  std::vector<std::string> n;
  for (const auto& h : sys.hydros) n.push_back(h.id);
  return n;
}

inline std::vector<std::string> renewable_names(const SystemModel& sys) {
  std::vector<std::string> n;
  for (const auto& r : sys.renewables) n.push_back(r.id);
  return n;
}

}  // namespace hydromarket
