#pragma once

// Dense bounded-variable revised simplex.
//
// Minimizes c'x + constant subject to row constraints (<=, =, >=) and column
// bounds (either side may be infinite). Every row receives a slack column so
// the working system is A x + s = b; rows whose initial residual violates the
// slack bounds receive an artificial column for phase 1.
//
// Dual sign convention: duals[i] = d(objective)/d(rhs[i]). A binding <= row
// in a minimization therefore has a nonpositive dual and a binding >= row a
// nonnegative one; equality rows are unrestricted.
//
// Pricing is Dantzig (largest reduced cost, ties to the lowest column index)
// with a switch to Bland's rule after a run of degenerate pivots. The ratio
// test prefers a basis change over a bound flip when both bind at the same
// step length. The pivot sequence is a pure function of the input, so the
// same LP always ends at the same basis.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace hydromarket::lp {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class Sense { LessEqual, Equal, GreaterEqual };

enum class Status { Optimal, Infeasible, Unbounded };

inline const char* to_string(Status s) {
  switch (s) {
    case Status::Optimal: return "optimal";
    case Status::Infeasible: return "infeasible";
    case Status::Unbounded: return "unbounded";
  }
  return "unknown";
}

struct Term {
  int column;
  double value;
};

struct Column {
  double cost = 0.0;
  double lower = 0.0;
  double upper = kInf;
  std::string name;
};

struct Row {
  std::vector<Term> terms;
  Sense sense = Sense::Equal;
  double rhs = 0.0;
  std::string name;
};

/// Raised when the solver cannot produce a trustworthy answer (singular
/// basis, iteration cap, residual check failure).
class LpError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class LinearProgram {
 public:
  int add_column(double cost, double lower, double upper, std::string name = {}) {
    if (!std::isfinite(cost)) throw std::invalid_argument("lp: non-finite objective coefficient");
    if (lower > upper) throw std::invalid_argument("lp: column lower bound exceeds upper bound");
    columns_.push_back({cost, lower, upper, std::move(name)});
    return static_cast<int>(columns_.size()) - 1;
  }

  int add_row(std::vector<Term> terms, Sense sense, double rhs, std::string name = {}) {
    for (const auto& t : terms) {
      if (t.column < 0 || t.column >= num_columns())
        throw std::invalid_argument("lp: row references unknown column");
      if (!std::isfinite(t.value)) throw std::invalid_argument("lp: non-finite row coefficient");
    }
    rows_.push_back({std::move(terms), sense, rhs, std::move(name)});
    return static_cast<int>(rows_.size()) - 1;
  }

  void set_rhs(int row, double rhs) { rows_.at(row).rhs = rhs; }
  void set_cost(int column, double cost) { columns_.at(column).cost = cost; }
  void set_bounds(int column, double lower, double upper) {
    auto& c = columns_.at(column);
    c.lower = lower;
    c.upper = upper;
  }

  int num_columns() const { return static_cast<int>(columns_.size()); }
  int num_rows() const { return static_cast<int>(rows_.size()); }
  const Column& column(int j) const { return columns_[j]; }
  const Row& row(int i) const { return rows_[i]; }
  const std::vector<Column>& columns() const { return columns_; }
  const std::vector<Row>& rows() const { return rows_; }

  double objective_constant = 0.0;

 private:
  std::vector<Column> columns_;
  std::vector<Row> rows_;
};

struct Solution {
  Status status = Status::Infeasible;
  std::vector<double> primal;
  std::vector<double> duals;
  std::vector<double> reduced_costs;
  double objective = 0.0;
  int iterations = 0;

  bool optimal() const { return status == Status::Optimal; }
};

struct SolverOptions {
  double feasibility_tolerance = 1e-7;
  double optimality_tolerance = 1e-9;
  double pivot_tolerance = 1e-9;
  int refactor_interval = 64;
  int degenerate_streak_for_bland = 50;
  int max_iterations = 0;  // 0 selects 100 * (rows + columns) + 1000
};

namespace detail {

enum class VarState { Basic, AtLower, AtUpper, FreeZero };

class Simplex {
 public:
  Simplex(const LinearProgram& lp, const SolverOptions& opt) : lp_(lp), opt_(opt) {
    m_ = lp.num_rows();
    n_ = lp.num_columns();
    build();
  }

  Solution run() {
    Solution sol;
    const int cap = opt_.max_iterations > 0 ? opt_.max_iterations : 100 * (m_ + total_) + 1000;

    if (num_artificials_ > 0) {
      std::vector<double> phase1(total_, 0.0);
      for (int j = first_artificial_; j < total_; ++j) phase1[j] = 1.0;
      auto st = iterate(phase1, cap);
      if (st == Status::Unbounded) throw LpError("lp: phase 1 reported unbounded");
      double infeas = 0.0;
      for (int j = first_artificial_; j < total_; ++j) infeas += value(j);
      if (infeas > opt_.feasibility_tolerance * (1.0 + rhs_scale_)) {
        sol.status = Status::Infeasible;
        sol.iterations = iterations_;
        return sol;
      }
      retire_artificials();
    }

    std::vector<double> cost(total_, 0.0);
    for (int j = 0; j < n_; ++j) cost[j] = lp_.column(j).cost;
    auto st = iterate(cost, cap);
    sol.iterations = iterations_;
    if (st == Status::Unbounded) {
      sol.status = Status::Unbounded;
      return sol;
    }

    refactor();
    sol.status = Status::Optimal;
    sol.primal.assign(n_, 0.0);
    for (int j = 0; j < n_; ++j) sol.primal[j] = value(j);

    auto y = duals(cost);
    sol.duals = y;
    sol.reduced_costs.assign(n_, 0.0);
    for (int j = 0; j < n_; ++j)
      sol.reduced_costs[j] = state_[j] == VarState::Basic ? 0.0 : reduced_cost(j, cost, y);

    double obj = lp_.objective_constant;
    for (int j = 0; j < n_; ++j) obj += cost[j] * sol.primal[j];
    sol.objective = obj;
    check_residuals(sol.primal);
    return sol;
  }

 private:
  struct Entry {
    int row;
    double value;
  };

  void build() {
    // structural, slack, then artificial columns
    total_ = n_ + m_;
    cols_.resize(total_);
    lower_.resize(total_);
    upper_.resize(total_);
    x_.assign(total_, 0.0);
    for (int j = 0; j < n_; ++j) {
      lower_[j] = lp_.column(j).lower;
      upper_[j] = lp_.column(j).upper;
    }
    for (int i = 0; i < m_; ++i) {
      for (const auto& t : lp_.row(i).terms) {
        if (t.value != 0.0) cols_[t.column].push_back({i, t.value});
      }
    }
    // merge duplicate (row, column) entries
    for (int j = 0; j < n_; ++j) {
      auto& c = cols_[j];
      std::stable_sort(c.begin(), c.end(), [](const Entry& a, const Entry& b) { return a.row < b.row; });
      std::vector<Entry> merged;
      for (const auto& e : c) {
        if (!merged.empty() && merged.back().row == e.row)
          merged.back().value += e.value;
        else
          merged.push_back(e);
      }
      c = std::move(merged);
    }

    b_.resize(m_);
    rhs_scale_ = 0.0;
    for (int i = 0; i < m_; ++i) {
      b_[i] = lp_.row(i).rhs;
      if (!std::isfinite(b_[i])) throw std::invalid_argument("lp: non-finite right-hand side");
      rhs_scale_ = std::max(rhs_scale_, std::abs(b_[i]));
      const int s = n_ + i;
      cols_[s].push_back({i, 1.0});
      switch (lp_.row(i).sense) {
        case Sense::LessEqual: lower_[s] = 0.0; upper_[s] = kInf; break;
        case Sense::GreaterEqual: lower_[s] = -kInf; upper_[s] = 0.0; break;
        case Sense::Equal: lower_[s] = 0.0; upper_[s] = 0.0; break;
      }
    }

    state_.assign(total_, VarState::AtLower);
    for (int j = 0; j < n_; ++j) {
      if (std::isfinite(lower_[j])) {
        state_[j] = VarState::AtLower;
        x_[j] = lower_[j];
      } else if (std::isfinite(upper_[j])) {
        state_[j] = VarState::AtUpper;
        x_[j] = upper_[j];
      } else {
        state_[j] = VarState::FreeZero;
        x_[j] = 0.0;
      }
    }

    std::vector<double> residual = b_;
    for (int j = 0; j < n_; ++j) {
      if (x_[j] == 0.0) continue;
      for (const auto& e : cols_[j]) residual[e.row] -= e.value * x_[j];
    }

    basis_.assign(m_, -1);
    first_artificial_ = total_;
    const double tol = opt_.feasibility_tolerance;
    for (int i = 0; i < m_; ++i) {
      const int s = n_ + i;
      const double r = residual[i];
      if (r >= lower_[s] - tol && r <= upper_[s] + tol) {
        basis_[i] = s;
        state_[s] = VarState::Basic;
        x_[s] = r;
        continue;
      }
      const double bound = r < lower_[s] ? lower_[s] : upper_[s];
      x_[s] = bound;
      state_[s] = bound == lower_[s] ? VarState::AtLower : VarState::AtUpper;
      const double rest = r - bound;
      const int a = total_++;
      cols_.push_back({{i, rest >= 0.0 ? 1.0 : -1.0}});
      lower_.push_back(0.0);
      upper_.push_back(kInf);
      x_.push_back(std::abs(rest));
      state_.push_back(VarState::Basic);
      basis_[i] = a;
    }
    num_artificials_ = total_ - first_artificial_;
    if (num_artificials_ == 0) first_artificial_ = total_;
    refactor();
  }

  double value(int j) const { return x_[j]; }

  std::vector<double> duals(const std::vector<double>& cost) const {
    std::vector<double> y(m_, 0.0);
    for (int k = 0; k < m_; ++k) {
      const double cb = cost[basis_[k]];
      if (cb == 0.0) continue;
      const double* row = &binv_[static_cast<std::size_t>(k) * m_];
      for (int i = 0; i < m_; ++i) y[i] += cb * row[i];
    }
    return y;
  }

  double reduced_cost(int j, const std::vector<double>& cost, const std::vector<double>& y) const {
    double d = cost[j];
    for (const auto& e : cols_[j]) d -= y[e.row] * e.value;
    return d;
  }

  std::vector<double> ftran(int j) const {
    std::vector<double> alpha(m_, 0.0);
    for (const auto& e : cols_[j]) {
      for (int k = 0; k < m_; ++k) alpha[k] += binv_[static_cast<std::size_t>(k) * m_ + e.row] * e.value;
    }
    return alpha;
  }

  bool fixed(int j) const { return lower_[j] == upper_[j]; }

  Status iterate(const std::vector<double>& cost, int cap) {
    double cmax = 0.0;
    for (double c : cost) cmax = std::max(cmax, std::abs(c));
    const double dtol = opt_.optimality_tolerance * (1.0 + cmax);
    int streak = 0;

    while (true) {
      if (iterations_ >= cap) throw LpError("lp: iteration limit reached");
      const bool bland = streak > opt_.degenerate_streak_for_bland;
      auto y = duals(cost);

      int enter = -1;
      double best = 0.0;
      double enter_d = 0.0;
      for (int j = 0; j < total_; ++j) {
        const auto st = state_[j];
        if (st == VarState::Basic || fixed(j)) continue;
        const double d = reduced_cost(j, cost, y);
        bool eligible = false;
        if (st == VarState::AtLower) eligible = d < -dtol;
        else if (st == VarState::AtUpper) eligible = d > dtol;
        else eligible = std::abs(d) > dtol;
        if (!eligible) continue;
        if (bland) {
          enter = j;
          enter_d = d;
          break;
        }
        if (std::abs(d) > best) {
          best = std::abs(d);
          enter = j;
          enter_d = d;
        }
      }
      if (enter < 0) return Status::Optimal;

      const double dir = enter_d < 0.0 ? 1.0 : -1.0;
      auto alpha = ftran(enter);

      double theta = kInf;
      int leave = -1;
      double leave_alpha = 0.0;
      for (int k = 0; k < m_; ++k) {
        const double a = alpha[k];
        if (std::abs(a) <= opt_.pivot_tolerance) continue;
        const int bj = basis_[k];
        const double delta = -dir * a;
        double ratio;
        if (delta < 0.0) {
          if (!std::isfinite(lower_[bj])) continue;
          ratio = (x_[bj] - lower_[bj]) / -delta;
        } else {
          if (!std::isfinite(upper_[bj])) continue;
          ratio = (upper_[bj] - x_[bj]) / delta;
        }
        ratio = std::max(ratio, 0.0);
        bool take = false;
        if (leave < 0 || ratio < theta - 1e-12 * (1.0 + theta)) {
          take = true;
        } else if (ratio <= theta + 1e-12 * (1.0 + theta)) {
          if (bland) take = bj < basis_[leave];
          else take = std::abs(a) > std::abs(leave_alpha) ||
                      (std::abs(a) == std::abs(leave_alpha) && bj < basis_[leave]);
        }
        if (take) {
          theta = std::min(theta, ratio);
          leave = k;
          leave_alpha = a;
        }
      }
      if (leave >= 0) {
        // exact step for the chosen row
        const int bj = basis_[leave];
        const double delta = -dir * leave_alpha;
        theta = delta < 0.0 ? (x_[bj] - lower_[bj]) / -delta : (upper_[bj] - x_[bj]) / delta;
        theta = std::max(theta, 0.0);
      }

      const double span = upper_[enter] - lower_[enter];
      // a bound flip only wins when clearly shorter: near-ties are taken as
      // basis changes, so values that round just below a bound still pivot
      const bool flip = std::isfinite(span) && (leave < 0 || span < theta - 1e-9 * (1.0 + theta));
      if (!flip && leave < 0) return Status::Unbounded;
      const double step = flip ? span : theta;

      ++iterations_;
      streak = step <= 1e-12 ? streak + 1 : 0;

      x_[enter] += dir * step;
      for (int k = 0; k < m_; ++k) {
        if (alpha[k] != 0.0) x_[basis_[k]] -= dir * step * alpha[k];
      }

      if (flip) {
        if (state_[enter] == VarState::AtLower) {
          state_[enter] = VarState::AtUpper;
          x_[enter] = upper_[enter];
        } else {
          state_[enter] = VarState::AtLower;
          x_[enter] = lower_[enter];
        }
        continue;
      }

      const int out = basis_[leave];
      const double delta = -dir * leave_alpha;
      if (delta < 0.0) {
        x_[out] = lower_[out];
        state_[out] = VarState::AtLower;
      } else {
        x_[out] = upper_[out];
        state_[out] = VarState::AtUpper;
      }
      pivot(leave, enter, alpha);
      if (++since_refactor_ >= opt_.refactor_interval) refactor();
    }
  }

  void pivot(int r, int enter, const std::vector<double>& alpha) {
    basis_[r] = enter;
    state_[enter] = VarState::Basic;
    const double piv = alpha[r];
    double* prow = &binv_[static_cast<std::size_t>(r) * m_];
    for (int i = 0; i < m_; ++i) prow[i] /= piv;
    for (int k = 0; k < m_; ++k) {
      if (k == r || alpha[k] == 0.0) continue;
      double* row = &binv_[static_cast<std::size_t>(k) * m_];
      const double f = alpha[k];
      for (int i = 0; i < m_; ++i) row[i] -= f * prow[i];
    }
  }

  void refactor() {
    since_refactor_ = 0;
    const std::size_t mm = static_cast<std::size_t>(m_) * m_;
    // dense B, then Gauss-Jordan with partial pivoting into binv_
    std::vector<double> bmat(mm, 0.0);
    for (int k = 0; k < m_; ++k) {
      for (const auto& e : cols_[basis_[k]]) bmat[static_cast<std::size_t>(e.row) * m_ + k] = e.value;
    }
    binv_.assign(mm, 0.0);
    for (int i = 0; i < m_; ++i) binv_[static_cast<std::size_t>(i) * m_ + i] = 1.0;
    for (int c = 0; c < m_; ++c) {
      int p = c;
      double best = std::abs(bmat[static_cast<std::size_t>(c) * m_ + c]);
      for (int r = c + 1; r < m_; ++r) {
        const double v = std::abs(bmat[static_cast<std::size_t>(r) * m_ + c]);
        if (v > best) {
          best = v;
          p = r;
        }
      }
      if (best < 1e-12) throw LpError("lp: singular basis during refactorization");
      if (p != c) {
        for (int i = 0; i < m_; ++i) {
          std::swap(bmat[static_cast<std::size_t>(p) * m_ + i], bmat[static_cast<std::size_t>(c) * m_ + i]);
          std::swap(binv_[static_cast<std::size_t>(p) * m_ + i], binv_[static_cast<std::size_t>(c) * m_ + i]);
        }
      }
      const double piv = bmat[static_cast<std::size_t>(c) * m_ + c];
      for (int i = 0; i < m_; ++i) {
        bmat[static_cast<std::size_t>(c) * m_ + i] /= piv;
        binv_[static_cast<std::size_t>(c) * m_ + i] /= piv;
      }
      for (int r = 0; r < m_; ++r) {
        if (r == c) continue;
        const double f = bmat[static_cast<std::size_t>(r) * m_ + c];
        if (f == 0.0) continue;
        for (int i = 0; i < m_; ++i) {
          bmat[static_cast<std::size_t>(r) * m_ + i] -= f * bmat[static_cast<std::size_t>(c) * m_ + i];
          binv_[static_cast<std::size_t>(r) * m_ + i] -= f * binv_[static_cast<std::size_t>(c) * m_ + i];
        }
      }
    }
    // x_B = B^-1 (b - N x_N)
    std::vector<double> r = b_;
    for (int j = 0; j < total_; ++j) {
      if (state_[j] == VarState::Basic || x_[j] == 0.0) continue;
      for (const auto& e : cols_[j]) r[e.row] -= e.value * x_[j];
    }
    for (int k = 0; k < m_; ++k) {
      const double* row = &binv_[static_cast<std::size_t>(k) * m_];
      double v = 0.0;
      for (int i = 0; i < m_; ++i) v += row[i] * r[i];
      x_[basis_[k]] = v;
    }
  }

  void retire_artificials() {
    for (int j = first_artificial_; j < total_; ++j) upper_[j] = 0.0;
    for (int r = 0; r < m_; ++r) {
      const int a = basis_[r];
      if (a < first_artificial_) continue;
      const double* row = &binv_[static_cast<std::size_t>(r) * m_];
      int enter = -1;
      double best = 0.0;
      for (int j = 0; j < first_artificial_; ++j) {
        if (state_[j] == VarState::Basic || fixed(j)) continue;
        double v = 0.0;
        for (const auto& e : cols_[j]) v += row[e.row] * e.value;
        if (std::abs(v) > std::max(best, 1e-7)) {
          best = std::abs(v);
          enter = j;
        }
      }
      if (enter < 0) continue;  // redundant row; artificial stays basic at zero
      auto alpha = ftran(enter);
      x_[a] = 0.0;
      state_[a] = VarState::AtLower;
      pivot(r, enter, alpha);
    }
    for (int j = first_artificial_; j < total_; ++j) {
      if (state_[j] != VarState::Basic) x_[j] = 0.0;
    }
    refactor();
  }

  void check_residuals(const std::vector<double>& x) const {
    const double tol = 10.0 * opt_.feasibility_tolerance;
    for (int j = 0; j < n_; ++j) {
      const double scale = 1.0 + std::abs(x[j]);
      if (x[j] < lower_[j] - tol * scale || x[j] > upper_[j] + tol * scale)
        throw LpError("lp: bound residual check failed for column " + std::to_string(j));
    }
    for (int i = 0; i < m_; ++i) {
      const auto& row = lp_.row(i);
      double ax = 0.0;
      double mag = std::abs(row.rhs);
      for (const auto& t : row.terms) {
        ax += t.value * x[t.column];
        mag = std::max(mag, std::abs(t.value * x[t.column]));
      }
      const double slack = ax - row.rhs;
      const double lim = tol * (1.0 + mag);
      bool bad = false;
      switch (row.sense) {
        case Sense::LessEqual: bad = slack > lim; break;
        case Sense::GreaterEqual: bad = slack < -lim; break;
        case Sense::Equal: bad = std::abs(slack) > lim; break;
      }
      if (bad) throw LpError("lp: row residual check failed for row " + std::to_string(i));
    }
  }

  const LinearProgram& lp_;
  SolverOptions opt_;
  int m_ = 0;
  int n_ = 0;
  int total_ = 0;
  int first_artificial_ = 0;
  int num_artificials_ = 0;
  int iterations_ = 0;
  int since_refactor_ = 0;
  double rhs_scale_ = 0.0;
  std::vector<std::vector<Entry>> cols_;
  std::vector<double> lower_, upper_, x_, b_;
  std::vector<VarState> state_;
  std::vector<int> basis_;
  std::vector<double> binv_;  // row-major m x m
};

}  // namespace detail

inline Solution solve(const LinearProgram& lp, const SolverOptions& options = {}) {
  if (lp.num_rows() == 0) {
    // bounds only: each column sits at its cheaper finite bound
    Solution sol;
    sol.status = Status::Optimal;
    sol.primal.assign(lp.num_columns(), 0.0);
    sol.reduced_costs.assign(lp.num_columns(), 0.0);
    double obj = lp.objective_constant;
    for (int j = 0; j < lp.num_columns(); ++j) {
      const auto& c = lp.column(j);
      double v;
      if (c.cost > 0.0) v = c.lower;
      else if (c.cost < 0.0) v = c.upper;
      else v = std::isfinite(c.lower) ? c.lower : (std::isfinite(c.upper) ? c.upper : 0.0);
      if (!std::isfinite(v)) {
        sol.status = Status::Unbounded;
        sol.primal.clear();
        return sol;
      }
      sol.primal[j] = v;
      sol.reduced_costs[j] = c.cost;
      obj += c.cost * v;
    }
    sol.objective = obj;
    return sol;
  }
  detail::Simplex simplex(lp, options);
  return simplex.run();
}

/// Writes the program in CPLEX LP file layout (debugging aid).
inline void write_lp(std::ostream& out, const LinearProgram& lp) {
  std::ostringstream os;
  os.precision(17);
  auto col_name = [&](int j) {
    const auto& n = lp.column(j).name;
    return n.empty() ? "x" + std::to_string(j) : n;
  };
  auto term = [&](double v, int j, bool first) {
    if (v < 0) os << (first ? "- " : " - ");
    else if (!first) os << " + ";
    os << std::abs(v) << ' ' << col_name(j);
  };
  os << "Minimize\n obj:";
  bool first = true;
  for (int j = 0; j < lp.num_columns(); ++j) {
    if (lp.column(j).cost == 0.0) continue;
    os << ' ';
    term(lp.column(j).cost, j, first);
    first = false;
  }
  if (lp.objective_constant != 0.0) os << (lp.objective_constant < 0 ? " - " : " + ") << std::abs(lp.objective_constant);
  else if (first) os << " 0";
  os << "\nSubject To\n";
  for (int i = 0; i < lp.num_rows(); ++i) {
    const auto& r = lp.row(i);
    os << ' ' << (r.name.empty() ? "c" + std::to_string(i) : r.name) << ':';
    bool f = true;
    for (const auto& t : r.terms) {
      os << ' ';
      term(t.value, t.column, f);
      f = false;
    }
    if (f) os << " 0 " << col_name(0);
    os << (r.sense == Sense::LessEqual ? " <= " : r.sense == Sense::GreaterEqual ? " >= " : " = ") << r.rhs << '\n';
  }
  os << "Bounds\n";
  for (int j = 0; j < lp.num_columns(); ++j) {
    const auto& c = lp.column(j);
    const bool lo = std::isfinite(c.lower), hi = std::isfinite(c.upper);
    if (!lo && !hi) os << ' ' << col_name(j) << " free\n";
    else if (!lo) os << " -inf <= " << col_name(j) << " <= " << c.upper << '\n';
    else if (!hi) os << ' ' << col_name(j) << " >= " << c.lower << '\n';
    else os << ' ' << c.lower << " <= " << col_name(j) << " <= " << c.upper << '\n';
  }
  os << "End\n";
  out << os.str();
}

}  // namespace hydromarket::lp
