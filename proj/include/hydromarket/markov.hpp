#pragma once

// Markov states per stage from jointly sampled market data: a spherical
// Gaussian mixture fitted by EM on standardized features classifies each
// sample, and transition matrices are the empirical label transitions
// between consecutive stages.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "csv.hpp"
#include "market.hpp"
#include "parallel.hpp"
#include "random.hpp"
#include "scenarios.hpp"
#include "sddp.hpp"

namespace hydromarket {

/// Per stage, one row of features per sample.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  FeatureMatrix(int stages, int samples, int features)
      : stages_(stages), samples_(samples), features_(features),
        data_(static_cast<std::size_t>(stages) * samples * features, 0.0) {}

  double& operator()(int t, int s, int f) { return data_[index(t, s, f)]; }
  double operator()(int t, int s, int f) const { return data_[index(t, s, f)]; }
  int stages() const { return stages_; }
  int samples() const { return samples_; }
  int features() const { return features_; }

  /// Rows of stage t, each column shifted to zero mean and scaled to unit
  /// standard deviation (constant columns become zero).
  std::vector<std::vector<double>> standardized(int t) const {
    std::vector<std::vector<double>> rows(samples_, std::vector<double>(features_));
    for (int f = 0; f < features_; ++f) {
      double mean = 0.0;
      for (int s = 0; s < samples_; ++s) mean += (*this)(t, s, f);
      mean /= samples_;
      double var = 0.0;
      for (int s = 0; s < samples_; ++s) var += ((*this)(t, s, f) - mean) * ((*this)(t, s, f) - mean);
      const double sd = std::sqrt(var / samples_);
      const double scale = sd > 1e-12 * std::max(1.0, std::abs(mean)) ? sd : 0.0;
      for (int s = 0; s < samples_; ++s) rows[s][f] = scale > 0.0 ? ((*this)(t, s, f) - mean) / scale : 0.0;
    }
    return rows;
  }

 private:
  std::size_t index(int t, int s, int f) const {
    return (static_cast<std::size_t>(t) * samples_ + s) * features_ + f;
  }
  int stages_ = 0, samples_ = 0, features_ = 0;
  std::vector<double> data_;
};

/// Spot price as the single feature.
inline FeatureMatrix price_features(const Grid2& prices) {
  FeatureMatrix fm(prices.stages(), prices.samples(), 1);
  for (int t = 0; t < prices.stages(); ++t)
    for (int s = 0; s < prices.samples(); ++s) fm(t, s, 0) = prices(t, s);
  return fm;
}

/// Price and quantity of every agent except `excluded`, in ascending agent
/// id order: (P_1, Q_1, P_2, Q_2, ...).
inline FeatureMatrix bid_features(const BidSurface& bids, int excluded) {
  int n = 0;
  for (const auto& [id, b] : bids.agents)
    if (id != excluded) ++n;
  FeatureMatrix fm(bids.stages, bids.samples, 2 * n);
  int f = 0;
  for (const auto& [id, b] : bids.agents) {
    if (id == excluded) continue;
    for (int t = 0; t < bids.stages; ++t)
      for (int s = 0; s < bids.samples; ++s) {
        fm(t, s, f) = b.price(t, s);
        fm(t, s, f + 1) = b.quantity(t, s);
      }
    f += 2;
  }
  return fm;
}

struct MixtureFit {
  std::vector<int> labels;                  // per sample, 0-based, by first appearance
  std::vector<std::vector<double>> means;   // per state, standardized units
  std::vector<double> variances;            // per state
  std::vector<double> weights;              // per state
  double log_likelihood = 0.0;
  int iterations = 0;
};

struct MixtureOptions {
  int max_iterations = 500;
  double tolerance = 1e-10;       // relative log-likelihood change
  double variance_floor = 1e-6;
};

namespace detail {

inline double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) d += (a[k] - b[k]) * (a[k] - b[k]);
  return d;
}

// Relabels so that states are numbered by first appearance and drops
// states without members.
inline void canonicalize(MixtureFit& fit) {
  std::vector<int> map(fit.means.size(), -1);
  int next = 0;
  for (int& l : fit.labels) {
    if (map[l] < 0) map[l] = next++;
    l = map[l];
  }
  MixtureFit out;
  out.means.resize(next);
  out.variances.resize(next);
  out.weights.resize(next);
  for (std::size_t k = 0; k < map.size(); ++k) {
    if (map[k] < 0) continue;
    out.means[map[k]] = fit.means[k];
    out.variances[map[k]] = fit.variances.empty() ? 0.0 : fit.variances[k];
  }
  for (int l : fit.labels) out.weights[l] += 1.0 / static_cast<double>(fit.labels.size());
  fit.means = std::move(out.means);
  fit.variances = std::move(out.variances);
  fit.weights = std::move(out.weights);
}

}  // namespace detail

/// Fits a K-component spherical Gaussian mixture to the rows and labels each
/// row by maximum responsibility. Seeding starts from a seeded random row and
/// adds the farthest row from the chosen centers. When K reaches the number
/// of distinct rows every distinct row is its own state.
inline MixtureFit fit_mixture(const std::vector<std::vector<double>>& rows, int K, std::uint64_t seed,
                              const MixtureOptions& opt = {}) {
  const int S = static_cast<int>(rows.size());
  if (S == 0) throw std::invalid_argument("fit_mixture: no samples");
  if (K < 1) throw std::invalid_argument("fit_mixture: state count must be at least 1");
  if (K > S) throw std::invalid_argument("fit_mixture: more states than samples");
  const int F = static_cast<int>(rows.front().size());

  MixtureFit fit;
  // distinct rows, in order of first appearance
  std::vector<int> distinct;
  std::vector<int> distinct_of(S, -1);
  for (int s = 0; s < S; ++s) {
    for (std::size_t d = 0; d < distinct.size(); ++d)
      if (rows[distinct[d]] == rows[s]) {
        distinct_of[s] = static_cast<int>(d);
        break;
      }
    if (distinct_of[s] < 0) {
      distinct_of[s] = static_cast<int>(distinct.size());
      distinct.push_back(s);
    }
  }
  if (K >= static_cast<int>(distinct.size())) {
    fit.labels = distinct_of;
    for (int d : distinct) fit.means.push_back(rows[d]);
    fit.variances.assign(distinct.size(), opt.variance_floor);
    detail::canonicalize(fit);
    return fit;
  }

  Rng rng(seed);
  std::vector<std::vector<double>> mu{rows[rng.index(S)]};
  std::vector<double> nearest(S);
  for (int s = 0; s < S; ++s) nearest[s] = detail::sq_dist(rows[s], mu[0]);
  while (static_cast<int>(mu.size()) < K) {
    int far = 0;
    for (int s = 1; s < S; ++s)
      if (nearest[s] > nearest[far]) far = s;
    mu.push_back(rows[far]);
    for (int s = 0; s < S; ++s) nearest[s] = std::min(nearest[s], detail::sq_dist(rows[s], mu.back()));
  }
  double init_var = 0.0;
  for (int s = 0; s < S; ++s) init_var += nearest[s];
  init_var = std::max(init_var / (static_cast<double>(S) * std::max(F, 1)), opt.variance_floor);
  std::vector<double> var(K, init_var);
  std::vector<double> w(K, 1.0 / K);

  std::vector<std::vector<double>> logr(S, std::vector<double>(K));
  double prev_ll = -std::numeric_limits<double>::infinity();
  int it = 0;
  for (; it < opt.max_iterations; ++it) {
    // E step
    const int Kc = static_cast<int>(mu.size());
    double ll = 0.0;
    for (int s = 0; s < S; ++s) {
      logr[s].resize(Kc);
      double mx = -std::numeric_limits<double>::infinity();
      for (int k = 0; k < Kc; ++k) {
        logr[s][k] = std::log(w[k]) - 0.5 * F * std::log(2.0 * std::numbers::pi * var[k]) -
                     detail::sq_dist(rows[s], mu[k]) / (2.0 * var[k]);
        mx = std::max(mx, logr[s][k]);
      }
      double z = 0.0;
      for (int k = 0; k < Kc; ++k) z += std::exp(logr[s][k] - mx);
      const double lse = mx + std::log(z);
      for (int k = 0; k < Kc; ++k) logr[s][k] -= lse;
      ll += lse;
    }
    fit.log_likelihood = ll;
    if (std::abs(ll - prev_ll) <= opt.tolerance * (1.0 + std::abs(ll))) break;
    prev_ll = ll;
    // M step; components that lose all mass are merged away
    std::vector<std::vector<double>> mu2;
    std::vector<double> var2, w2;
    std::vector<int> keep;
    for (int k = 0; k < Kc; ++k) {
      double nk = 0.0;
      std::vector<double> m(F, 0.0);
      for (int s = 0; s < S; ++s) {
        const double r = std::exp(logr[s][k]);
        nk += r;
        for (int f = 0; f < F; ++f) m[f] += r * rows[s][f];
      }
      if (nk < 1e-10) continue;
      for (double& x : m) x /= nk;
      double v = 0.0;
      for (int s = 0; s < S; ++s) v += std::exp(logr[s][k]) * detail::sq_dist(rows[s], m);
      v /= nk * std::max(F, 1);
      mu2.push_back(std::move(m));
      var2.push_back(std::max(v, opt.variance_floor));
      w2.push_back(nk / S);
    }
    mu = std::move(mu2);
    var = std::move(var2);
    w = std::move(w2);
  }
  fit.iterations = it;
  fit.labels.assign(S, 0);
  for (int s = 0; s < S; ++s) {
    int best = 0;
    for (int k = 1; k < static_cast<int>(logr[s].size()); ++k)
      if (logr[s][k] > logr[s][best]) best = k;
    fit.labels[s] = best;
  }
  fit.means = mu;
  fit.variances = var;
  detail::canonicalize(fit);
  return fit;
}

/// Labels [t][s] (0-based) from an independent mixture fit at every stage.
inline std::vector<std::vector<int>> fit_states(const FeatureMatrix& fm, int K, std::uint64_t seed, int workers = 1) {
  std::vector<std::vector<int>> labels(fm.stages());
  parallel_for(fm.stages(), workers, [&](int t) {
    const int k = std::min(K, fm.samples());
    labels[t] = fit_mixture(fm.standardized(t), k, seed + static_cast<std::uint64_t>(t)).labels;
  });
  return labels;
}

/// Empirical transition matrices [t][from][to] between consecutive stages.
/// A state without members falls back to the next stage's label
/// distribution.
inline std::vector<std::vector<std::vector<double>>> estimate_transitions(const std::vector<std::vector<int>>& labels) {
  const int T = static_cast<int>(labels.size());
  std::vector<std::vector<std::vector<double>>> out;
  auto count_states = [&](int t) {
    int k = 0;
    for (int l : labels[t]) k = std::max(k, l + 1);
    return k;
  };
  for (int t = 0; t + 1 < T; ++t) {
    if (labels[t].size() != labels[t + 1].size())
      throw std::invalid_argument("estimate_transitions: sample count differs between stages");
    const int from = count_states(t);
    const int to = count_states(t + 1);
    std::vector<std::vector<double>> counts(from, std::vector<double>(to, 0.0));
    std::vector<double> marginal(to, 0.0);
    for (std::size_t s = 0; s < labels[t].size(); ++s) {
      counts[labels[t][s]][labels[t + 1][s]] += 1.0;
      marginal[labels[t + 1][s]] += 1.0;
    }
    for (auto& row : counts) {
      double n = 0.0;
      for (double c : row) n += c;
      if (n == 0.0) {
        row = marginal;
        n = static_cast<double>(labels[t].size());
      }
      for (double& c : row) c /= n;
    }
    out.push_back(std::move(counts));
  }
  return out;
}

/// States per stage and transitions estimated from the features.
inline sddp::MarkovLattice estimate_chain(const FeatureMatrix& fm, int K, std::uint64_t seed, int workers = 1) {
  auto labels = fit_states(fm, K, seed, workers);
  auto trans = estimate_transitions(labels);
  return sddp::MarkovLattice::from_labels(std::move(labels), std::move(trans));
}

inline void write_labels_csv(std::ostream& os, const sddp::MarkovLattice& m) {
  os << "stage,sample,state\n";
  for (int t = 0; t < m.stages(); ++t)
    for (std::size_t s = 0; s < m.labels[t].size(); ++s)
      os << t + 1 << ',' << s + 1 << ',' << m.labels[t][s] + 1 << '\n';
}

inline void write_transitions_csv(std::ostream& os, const sddp::MarkovLattice& m) {
  os << "stage,from,to,prob\n";
  for (std::size_t t = 0; t < m.transitions.size(); ++t)
    for (std::size_t a = 0; a < m.transitions[t].size(); ++a)
      for (std::size_t b = 0; b < m.transitions[t][a].size(); ++b)
        os << t + 1 << ',' << a + 1 << ',' << b + 1 << ',' << csv::num(m.transitions[t][a][b]) << '\n';
}

}  // namespace hydromarket
