#pragma once

// Stochastic dual dynamic programming over a Markov lattice.
//
// Each stage t, Markov state mu and realization (sample) s defines a stage
// LP through a StageModelBuilder. The engine appends one epigraph column
// alpha_m per successor state m of stage t+1, weighted by the transition
// probability P(m | mu), and the accumulated cuts
//     alpha_m >= intercept + gradient' x_{t+1}.
// A lattice with a single state per stage is plain SDDP with stagewise
// independent realizations.
//
// Incoming state enters only right-hand sides: rhs[row] += coefficient *
// x_in[k] for each link of dimension k, so the cut gradient for dimension k
// is sum(dual[row] * coefficient) over its links.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lp.hpp"
#include "parallel.hpp"
#include "random.hpp"

namespace hydromarket::sddp {

class SddpError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StateLink {
  int row;
  double coefficient;
};

struct StageProblem {
  lp::LinearProgram lp;  // right-hand sides for a zero incoming state
  std::vector<int> state_columns;                  // outgoing state, one column per dimension
  std::vector<std::vector<StateLink>> state_links;  // incoming state, per dimension
};

class StageModelBuilder {
 public:
  virtual ~StageModelBuilder() = default;
  virtual int stages() const = 0;
  virtual int samples() const = 0;
  virtual int state_dimension() const = 0;
  virtual std::vector<double> initial_state() const = 0;
  virtual StageProblem build(int stage, int markov_state, int sample) const = 0;
  /// Lower bound on the expected cost of stages after `stage`; bounds the
  /// epigraph columns before cuts exist.
  virtual double future_cost_floor(int /*stage*/) const { return 0.0; }
};

/// Per-stage Markov states with their member samples and the transition
/// matrices between consecutive stages.
struct MarkovLattice {
  std::vector<std::vector<int>> labels;                       // [t][s] -> state
  std::vector<std::vector<std::vector<int>>> members;         // [t][state] -> samples
  std::vector<std::vector<std::vector<double>>> transitions;  // [t][from][to], t < T-1

  int stages() const { return static_cast<int>(labels.size()); }
  int states(int t) const { return static_cast<int>(members[t].size()); }

  static MarkovLattice independent(int stages, int samples) {
    std::vector<std::vector<int>> labels(stages, std::vector<int>(samples, 0));
    std::vector<std::vector<std::vector<double>>> trans(stages > 0 ? stages - 1 : 0, {{1.0}});
    return from_labels(std::move(labels), std::move(trans));
  }

  static MarkovLattice from_labels(std::vector<std::vector<int>> labels,
                                   std::vector<std::vector<std::vector<double>>> transitions) {
    MarkovLattice m;
    m.labels = std::move(labels);
    m.transitions = std::move(transitions);
    m.members.resize(m.labels.size());
    for (std::size_t t = 0; t < m.labels.size(); ++t) {
      int k = 0;
      for (int l : m.labels[t]) k = std::max(k, l + 1);
      if (t + 1 < m.labels.size() && t < m.transitions.size())
        k = std::max(k, static_cast<int>(m.transitions[t].size()));
      if (t > 0 && t - 1 < m.transitions.size() && !m.transitions[t - 1].empty())
        k = std::max(k, static_cast<int>(m.transitions[t - 1].front().size()));
      m.members[t].resize(k);
      for (std::size_t s = 0; s < m.labels[t].size(); ++s) {
        const int l = m.labels[t][s];
        if (l >= 0) m.members[t][l].push_back(static_cast<int>(s));
      }
    }
    return m;
  }

  /// Structural problems; empty when consistent.
  std::vector<std::string> check(int samples) const {
    std::vector<std::string> out;
    const int T = stages();
    if (static_cast<int>(transitions.size()) != std::max(T - 1, 0)) out.push_back("transition count != stages - 1");
    for (int t = 0; t < T; ++t) {
      if (static_cast<int>(labels[t].size()) != samples) out.push_back("stage " + std::to_string(t) + ": label count");
      for (int l : labels[t])
        if (l < 0 || l >= states(t)) out.push_back("stage " + std::to_string(t) + ": label out of range");
      for (int m = 0; m < states(t); ++m)
        if (members[t][m].empty()) out.push_back("stage " + std::to_string(t) + ": empty state " + std::to_string(m));
    }
    for (int t = 0; t + 1 < T && t < static_cast<int>(transitions.size()); ++t) {
      const auto& P = transitions[t];
      if (static_cast<int>(P.size()) != states(t)) out.push_back("stage " + std::to_string(t) + ": row count");
      for (const auto& row : P) {
        if (static_cast<int>(row.size()) != states(t + 1))
          out.push_back("stage " + std::to_string(t) + ": column count");
        double sum = 0.0;
        for (double p : row) {
          if (p < 0.0) out.push_back("stage " + std::to_string(t) + ": negative probability");
          sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-9) out.push_back("stage " + std::to_string(t) + ": row does not sum to 1");
      }
    }
    return out;
  }
};

struct Cut {
  double intercept = 0.0;
  std::vector<double> gradient;
  int markov_state = 0;

  double value(const std::vector<double>& x) const {
    double v = intercept;
    for (std::size_t k = 0; k < gradient.size(); ++k) v += gradient[k] * x[k];
    return v;
  }
};

/// Append-only cuts; cuts[t][m] bound the cost-to-go from stage t+1 in
/// Markov state m as a function of the state leaving stage t.
struct CutPool {
  std::vector<std::vector<std::vector<Cut>>> cuts;

  const std::vector<Cut>& at(int t, int m) const { return cuts[t][m]; }

  double value(int t, int m, const std::vector<double>& x, double floor) const {
    double v = floor;
    for (const auto& c : cuts[t][m]) v = std::max(v, c.value(x));
    return v;
  }

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& st : cuts)
      for (const auto& m : st) n += m.size();
    return n;
  }
};

struct IterationLog {
  int iteration = 0;
  double lower_bound = 0.0;
  double upper_bound_mean = 0.0;
  double upper_bound_stderr = 0.0;  // NaN with a single forward pass
};

struct Policy {
  CutPool cuts;
  MarkovLattice lattice;
  std::vector<IterationLog> log;
};

struct Options {
  int max_iterations = 50;
  int forward_passes = 1;
  std::uint64_t seed = 1;
  double bound_stall_tolerance = 1e-8;  // relative lower-bound improvement
  int stall_window = 3;
  int workers = 1;
};

struct StageSolve {
  lp::Solution solution;
  double immediate_cost = 0.0;
  std::vector<double> state_out;
  std::vector<double> gradient;  // d objective / d incoming state
};

struct Trajectory {
  std::vector<int> samples;                  // realization index per stage
  std::vector<int> markov_states;            // per stage
  std::vector<std::vector<double>> states;   // outgoing state per stage
  double cost = 0.0;
};

struct StageRecord {
  std::vector<double> primal;
  std::vector<double> duals;
  double immediate_cost = 0.0;
  int markov_state = 0;
};

struct SimulationResult {
  int stages = 0;
  int samples = 0;
  std::vector<StageRecord> records;  // [t * samples + s]
  std::vector<double> path_costs;    // per sample

  const StageRecord& at(int t, int s) const { return records[static_cast<std::size_t>(t) * samples + s]; }

  double mean_cost() const {
    double m = 0.0;
    for (double c : path_costs) m += c;
    return path_costs.empty() ? 0.0 : m / static_cast<double>(path_costs.size());
  }

  double stderr_cost() const {
    const auto n = path_costs.size();
    if (n < 2) return 0.0;
    const double m = mean_cost();
    double v = 0.0;
    for (double c : path_costs) v += (c - m) * (c - m);
    return std::sqrt(v / static_cast<double>(n - 1) / static_cast<double>(n));
  }

  bool operator==(const SimulationResult& o) const {
    if (stages != o.stages || samples != o.samples || path_costs != o.path_costs) return false;
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& a = records[i];
      const auto& b = o.records[i];
      if (a.primal != b.primal || a.duals != b.duals || a.immediate_cost != b.immediate_cost ||
          a.markov_state != b.markov_state)
        return false;
    }
    return true;
  }
};

class Solver {
 public:
  Solver(const StageModelBuilder& builder, MarkovLattice lattice, Options options = {})
      : builder_(builder), options_(options), rng_(options.seed) {
    const int T = builder.stages();
    if (T < 1) throw SddpError("sddp: need at least one stage");
    if (lattice.stages() != T) throw SddpError("sddp: lattice stage count differs from model");
    if (auto bad = lattice.check(builder.samples()); !bad.empty()) throw SddpError("sddp: lattice invalid: " + bad.front());
    policy_.lattice = std::move(lattice);
    policy_.cuts.cuts.resize(T > 1 ? T - 1 : 0);
    for (int t = 0; t + 1 < T; ++t) policy_.cuts.cuts[t].resize(policy_.lattice.states(t + 1));
    dim_ = builder.state_dimension();
    x0_ = builder.initial_state();
    if (static_cast<int>(x0_.size()) != dim_) throw SddpError("sddp: initial state has wrong dimension");
  }

  const Policy& policy() const { return policy_; }
  const Options& options() const { return options_; }

  /// Solves the stage LP at (t, mu, s) with incoming state x_in under the
  /// current cuts.
  StageSolve solve_stage(int t, int mu, int s, const std::vector<double>& x_in) const {
    const int T = builder_.stages();
    auto prob = builder_.build(t, mu, s);
    if (static_cast<int>(prob.state_columns.size()) != dim_ || static_cast<int>(prob.state_links.size()) != dim_)
      throw SddpError("sddp: stage problem state dimension mismatch at stage " + std::to_string(t));
    auto& lp = prob.lp;
    const int base_columns = lp.num_columns();
    const int base_rows = lp.num_rows();
    for (int k = 0; k < dim_; ++k)
      for (const auto& link : prob.state_links[k])
        lp.set_rhs(link.row, lp.row(link.row).rhs + link.coefficient * x_in[k]);

    std::vector<int> alpha_cols;
    std::vector<double> weights;
    if (t + 1 < T) {
      const auto& P = policy_.lattice.transitions[t][mu];
      const double floor = builder_.future_cost_floor(t);
      for (int m = 0; m < policy_.lattice.states(t + 1); ++m) {
        const int a = lp.add_column(P[m], floor, lp::kInf, "alpha_" + std::to_string(m));
        alpha_cols.push_back(a);
        weights.push_back(P[m]);
        for (const auto& cut : policy_.cuts.cuts[t][m]) {
          std::vector<lp::Term> terms{{a, 1.0}};
          for (int k = 0; k < dim_; ++k)
            if (cut.gradient[k] != 0.0) terms.push_back({prob.state_columns[k], -cut.gradient[k]});
          lp.add_row(std::move(terms), lp::Sense::GreaterEqual, cut.intercept);
        }
      }
    }

    StageSolve out;
    out.solution = lp::solve(lp);
    if (!out.solution.optimal()) {
      std::ostringstream msg;
      msg << "sddp: stage problem " << lp::to_string(out.solution.status) << " at stage " << t + 1
          << ", markov state " << mu + 1 << ", sample " << s + 1 << ", incoming state [";
      for (int k = 0; k < dim_; ++k) msg << (k ? ", " : "") << x_in[k];
      msg << "]";
      throw SddpError(msg.str());
    }
    const auto& sol = out.solution;
    out.immediate_cost = sol.objective;
    for (std::size_t i = 0; i < alpha_cols.size(); ++i) out.immediate_cost -= weights[i] * sol.primal[alpha_cols[i]];
    out.state_out.resize(dim_);
    out.gradient.assign(dim_, 0.0);
    for (int k = 0; k < dim_; ++k) {
      out.state_out[k] = sol.primal[prob.state_columns[k]];
      for (const auto& link : prob.state_links[k]) out.gradient[k] += sol.duals[link.row] * link.coefficient;
    }
    // report only the builder's own columns and rows
    out.solution.primal.resize(base_columns);
    out.solution.reduced_costs.resize(base_columns);
    out.solution.duals.resize(base_rows);
    return out;
  }

  Trajectory forward_pass(Rng& rng) const {
    const int T = builder_.stages();
    const auto& L = policy_.lattice;
    Trajectory tr;
    std::vector<double> x = x0_;
    int mu = 0;
    for (int t = 0; t < T; ++t) {
      int s;
      if (t == 0) {
        s = rng.index(builder_.samples());
        mu = L.labels[0][s];
      } else {
        mu = rng.categorical(L.transitions[t - 1][mu]);
        const auto& pool = L.members[t][mu];
        s = pool[rng.index(static_cast<int>(pool.size()))];
      }
      auto st = solve_stage(t, mu, s, x);
      tr.samples.push_back(s);
      tr.markov_states.push_back(mu);
      tr.cost += st.immediate_cost;
      x = st.state_out;
      tr.states.push_back(x);
    }
    return tr;
  }

  /// Adds one cut per (stage, Markov state) along the trajectory, from the
  /// last stage backwards.
  void backward_pass(const Trajectory& tr) {
    const int T = builder_.stages();
    const auto& L = policy_.lattice;
    for (int t = T - 1; t >= 1; --t) {
      const auto& x_hat = tr.states[t - 1];
      for (int m = 0; m < L.states(t); ++m) {
        const auto& pool = L.members[t][m];
        const int n = static_cast<int>(pool.size());
        std::vector<StageSolve> solves(n);
        parallel_for(n, options_.workers, [&](int i) { solves[i] = solve_stage(t, m, pool[i], x_hat); });
        Cut cut;
        cut.markov_state = m;
        cut.gradient.assign(dim_, 0.0);
        double value = 0.0;
        for (const auto& sv : solves) {
          value += sv.solution.objective;
          for (int k = 0; k < dim_; ++k) cut.gradient[k] += sv.gradient[k];
        }
        value /= n;
        for (int k = 0; k < dim_; ++k) cut.gradient[k] /= n;
        cut.intercept = value;
        for (int k = 0; k < dim_; ++k) cut.intercept -= cut.gradient[k] * x_hat[k];
        // a cut already in the pool adds a redundant row to every later solve
        auto& pool_cuts = policy_.cuts.cuts[t - 1][m];
        const auto same = [&](const Cut& c) {
          const auto close = [](double a, double b) { return std::abs(a - b) <= 1e-9 * (1.0 + std::abs(b)); };
          if (!close(c.intercept, cut.intercept)) return false;
          for (int k = 0; k < dim_; ++k)
            if (!close(c.gradient[k], cut.gradient[k])) return false;
          return true;
        };
        if (std::none_of(pool_cuts.begin(), pool_cuts.end(), same)) pool_cuts.push_back(std::move(cut));
      }
    }
  }

  /// Expected first-stage objective under the current cuts.
  double lower_bound() const {
    const int S = builder_.samples();
    std::vector<double> obj(S);
    parallel_for(S, options_.workers,
                 [&](int s) { obj[s] = solve_stage(0, policy_.lattice.labels[0][s], s, x0_).solution.objective; });
    double lb = 0.0;
    for (double v : obj) lb += v;
    return lb / S;
  }

  /// One training iteration: forward passes, backward passes, bound update.
  IterationLog iterate() {
    const int passes = std::max(1, options_.forward_passes);
    std::vector<double> costs;
    for (int p = 0; p < passes; ++p) {
      auto tr = forward_pass(rng_);
      costs.push_back(tr.cost);
      backward_pass(tr);
    }
    IterationLog log;
    log.iteration = static_cast<int>(policy_.log.size()) + 1;
    log.lower_bound = lower_bound();
    double mean = 0.0;
    for (double c : costs) mean += c;
    mean /= static_cast<double>(costs.size());
    log.upper_bound_mean = mean;
    if (costs.size() > 1) {
      double v = 0.0;
      for (double c : costs) v += (c - mean) * (c - mean);
      log.upper_bound_stderr = std::sqrt(v / static_cast<double>(costs.size() - 1) / static_cast<double>(costs.size()));
    } else {
      log.upper_bound_stderr = std::numeric_limits<double>::quiet_NaN();
    }
    policy_.log.push_back(log);
    return log;
  }

  bool stalled() const {
    const auto& lg = policy_.log;
    const int w = std::max(1, options_.stall_window);
    if (static_cast<int>(lg.size()) <= w) return false;
    const double now = lg.back().lower_bound;
    const double then = lg[lg.size() - 1 - w].lower_bound;
    return now - then <= options_.bound_stall_tolerance * std::max(1.0, std::abs(now));
  }

  const Policy& train() {
    while (static_cast<int>(policy_.log.size()) < options_.max_iterations) {
      iterate();
      if (stalled()) break;
    }
    return policy_;
  }

  /// Chronological solve along every stored sample path.
  SimulationResult simulate() const {
    const int T = builder_.stages();
    const int S = builder_.samples();
    SimulationResult res;
    res.stages = T;
    res.samples = S;
    res.records.resize(static_cast<std::size_t>(T) * S);
    res.path_costs.assign(S, 0.0);
    parallel_for(S, options_.workers, [&](int s) {
      std::vector<double> x = x0_;
      double cost = 0.0;
      for (int t = 0; t < T; ++t) {
        const int mu = policy_.lattice.labels[t][s];
        auto st = solve_stage(t, mu, s, x);
        auto& rec = res.records[static_cast<std::size_t>(t) * S + s];
        rec.primal = std::move(st.solution.primal);
        rec.duals = std::move(st.solution.duals);
        rec.immediate_cost = st.immediate_cost;
        rec.markov_state = mu;
        cost += st.immediate_cost;
        x = std::move(st.state_out);
      }
      res.path_costs[s] = cost;
    });
    return res;
  }

 private:
  const StageModelBuilder& builder_;
  Options options_;
  Policy policy_;
  Rng rng_;
  int dim_ = 0;
  std::vector<double> x0_;
};

}  // namespace hydromarket::sddp
