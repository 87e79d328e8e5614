#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "toys.hpp"

using namespace hydromarket;

namespace {

/// True when two labelings induce the same partition of the samples.
bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = i + 1; j < a.size(); ++j)
      if ((a[i] == a[j]) != (b[i] == b[j])) return false;
  return true;
}

/// Two well separated blobs in two dimensions; truth[s] is the blob.
std::vector<std::vector<double>> blobs(int n, Rng& rng, std::vector<int>& truth) {
  std::vector<std::vector<double>> rows;
  truth.clear();
  for (int s = 0; s < n; ++s) {
    const int c = rng.uniform() < 0.4 ? 1 : 0;
    truth.push_back(c);
    rows.push_back({10.0 * c + rng.normal() * 0.5, -5.0 * c + rng.normal() * 0.5});
  }
  return rows;
}

}  // namespace

TEST(Markov, SingleStateFit) {
  Rng rng(1);
  std::vector<int> truth;
  const auto rows = blobs(50, rng, truth);
  const auto fit = fit_mixture(rows, 1, 3);
  EXPECT_TRUE(std::all_of(fit.labels.begin(), fit.labels.end(), [](int l) { return l == 0; }));
  ASSERT_EQ(fit.weights.size(), 1u);
  EXPECT_DOUBLE_EQ(fit.weights[0], 1.0);
}

TEST(Markov, TwoClustersRecoveredAndSelfConsistent) {
  Rng rng(2);
  std::vector<int> truth;
  const auto rows = blobs(200, rng, truth);
  const auto fit = fit_mixture(rows, 2, 11);
  EXPECT_TRUE(same_partition(fit.labels, truth));
  // nearest-centroid oracle: recompute centroids of the labeled groups and
  // check every row is closest to its own
  std::vector<std::vector<double>> c(2, std::vector<double>(2, 0.0));
  std::vector<double> n(2, 0.0);
  for (std::size_t s = 0; s < rows.size(); ++s) {
    n[fit.labels[s]] += 1.0;
    for (int f = 0; f < 2; ++f) c[fit.labels[s]][f] += rows[s][f];
  }
  for (int k = 0; k < 2; ++k)
    for (int f = 0; f < 2; ++f) c[k][f] /= n[k];
  for (std::size_t s = 0; s < rows.size(); ++s) {
    auto d = [&](int k) { return std::pow(rows[s][0] - c[k][0], 2) + std::pow(rows[s][1] - c[k][1], 2); };
    EXPECT_LT(d(fit.labels[s]), d(1 - fit.labels[s]));
  }
  EXPECT_EQ(fit.labels.front(), 0);  // canonical numbering by first appearance
}

TEST(Markov, AsManyStatesAsDistinctRows) {
  const std::vector<std::vector<double>> rows{{3.0}, {1.0}, {3.0}, {2.0}};
  const auto fit = fit_mixture(rows, 3, 1);
  EXPECT_EQ(fit.labels, (std::vector<int>{0, 1, 0, 2}));
  const auto more = fit_mixture(rows, 4, 1);
  EXPECT_EQ(more.labels, (std::vector<int>{0, 1, 0, 2}));
  EXPECT_THROW(fit_mixture(rows, 5, 1), std::invalid_argument);
  EXPECT_THROW(fit_mixture(rows, 0, 1), std::invalid_argument);
}

TEST(Markov, PermutationInvariantPartition) {
  Rng rng(4);
  std::vector<int> truth;
  const auto rows = blobs(120, rng, truth);
  std::vector<int> perm(rows.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
  for (std::size_t i = perm.size(); i-- > 1;) std::swap(perm[i], perm[rng.index(static_cast<int>(i) + 1)]);
  std::vector<std::vector<double>> shuffled;
  for (int p : perm) shuffled.push_back(rows[p]);
  const auto a = fit_mixture(rows, 2, 5);
  const auto b = fit_mixture(shuffled, 2, 5);
  std::vector<int> back(rows.size());
  for (std::size_t i = 0; i < perm.size(); ++i) back[perm[i]] = b.labels[i];
  EXPECT_TRUE(same_partition(a.labels, back));
}

TEST(Markov, SameSeedSameFit) {
  Rng rng(8);
  std::vector<std::vector<double>> rows;
  for (int s = 0; s < 60; ++s) rows.push_back({rng.normal(), rng.normal()});
  const auto a = fit_mixture(rows, 3, 42);
  const auto b = fit_mixture(rows, 3, 42);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.log_likelihood, b.log_likelihood);
}

TEST(Markov, AlternatingLabelsGiveDeterministicSwitch) {
  const std::vector<std::vector<int>> labels{{0, 1, 0, 1}, {1, 0, 1, 0}, {0, 1, 0, 1}};
  const auto P = estimate_transitions(labels);
  ASSERT_EQ(P.size(), 2u);
  for (const auto& m : P) {
    EXPECT_EQ(m, (std::vector<std::vector<double>>{{0.0, 1.0}, {1.0, 0.0}}));
  }
}

TEST(Markov, TransitionsFromCounts) {
  const std::vector<std::vector<int>> labels{{0, 0, 0, 1}, {0, 1, 1, 1}};
  const auto P = estimate_transitions(labels);
  EXPECT_NEAR(P[0][0][0], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(P[0][0][1], 2.0 / 3.0, 1e-15);
  EXPECT_EQ(P[0][1], (std::vector<double>{0.0, 1.0}));
}

TEST(Markov, KnownChainRecovered) {
  // two regimes with feature means 0 and 10; P(stay) differs by state
  const std::vector<std::vector<double>> P{{0.8, 0.2}, {0.3, 0.7}};
  const int T = 3, S = 10000;
  Rng rng(77);
  FeatureMatrix fm(T, S, 1);
  std::vector<std::vector<int>> truth(T, std::vector<int>(S));
  for (int s = 0; s < S; ++s) {
    int x = rng.uniform() < 0.5 ? 0 : 1;
    for (int t = 0; t < T; ++t) {
      if (t > 0) x = rng.uniform() < P[x][0] ? 0 : 1;
      truth[t][s] = x;
      fm(t, s, 0) = 10.0 * x + rng.normal();
    }
  }
  const auto chain = estimate_chain(fm, 2, 1, 2);
  ASSERT_TRUE(chain.check(S).empty());
  for (int t = 0; t + 1 < T; ++t) {
    // map fitted labels to true regimes by majority
    std::vector<int> to_true(2, -1);
    for (int k = 0; k < 2; ++k) {
      int ones = 0, n = 0;
      for (int s = 0; s < S; ++s)
        if (chain.labels[t][s] == k) {
          ++n;
          ones += truth[t][s];
        }
      to_true[k] = 2 * ones > n ? 1 : 0;
    }
    std::vector<int> to_true_next(2, -1);
    for (int k = 0; k < 2; ++k) {
      int ones = 0, n = 0;
      for (int s = 0; s < S; ++s)
        if (chain.labels[t + 1][s] == k) {
          ++n;
          ones += truth[t + 1][s];
        }
      to_true_next[k] = 2 * ones > n ? 1 : 0;
    }
    ASSERT_NE(to_true[0], to_true[1]);
    ASSERT_NE(to_true_next[0], to_true_next[1]);
    double worst = 0.0;
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b)
        worst = std::max(worst, std::abs(chain.transitions[t][a][b] - P[to_true[a]][to_true_next[b]]));
    EXPECT_LE(worst, 0.03) << "stage " << t;
  }
}

TEST(Markov, FeaturesFromBids) {
  BidSurface b{1, 2, {}};
  b[3].price(0, 1) = 7.0;
  b[3].quantity(0, 1) = 8.0;
  b[1].price(0, 0) = 1.0;
  b[2].quantity(0, 0) = 4.0;
  const auto fm = bid_features(b, 2);
  ASSERT_EQ(fm.features(), 4);
  EXPECT_EQ(fm(0, 0, 0), 1.0);  // agent 1 first
  EXPECT_EQ(fm(0, 1, 2), 7.0);  // then agent 3
  EXPECT_EQ(fm(0, 1, 3), 8.0);
  const auto rows = fm.standardized(0);
  EXPECT_DOUBLE_EQ(rows[0][0], 1.0);
  EXPECT_DOUBLE_EQ(rows[1][0], -1.0);
}

TEST(Markov, CsvWriters) {
  const auto L = sddp::MarkovLattice::from_labels({{0, 1}, {0, 0}}, {{{1.0}, {1.0}}});
  std::ostringstream a, b;
  write_labels_csv(a, L);
  write_transitions_csv(b, L);
  EXPECT_EQ(a.str(), "stage,sample,state\n1,1,1\n1,2,2\n2,1,1\n2,2,1\n");
  EXPECT_EQ(b.str(), "stage,from,to,prob\n1,1,1,1\n1,2,1,1\n");
}
