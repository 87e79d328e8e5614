#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "sddp_oracle.hpp"

using namespace hydromarket;

namespace {

SystemModel two_hydro_two_stage() {
  auto sys = toys::two_hydro_four_stage();
  sys.stages = 2;
  sys.demand.demand.resize(2);
  return sys;
}

sddp::Options long_run(int iterations) {
  sddp::Options o;
  o.max_iterations = iterations;
  o.stall_window = iterations;  // run to the iteration cap
  o.bound_stall_tolerance = 1e-12;
  return o;
}

}  // namespace

TEST(Sddp, DeterministicTwoStageMatchesExtensiveForm) {
  const auto sys = toys::two_stage_hydro_thermal();
  const auto sc = toys::two_stage_inflows(sys);
  const auto L = sddp::MarkovLattice::independent(2, 1);
  const double ef = oracle::two_stage_extensive_form(sys, sc, L);
  EXPECT_NEAR(ef, 50.0, 1e-9);

  CentralizedModel model(sys, sc);
  sddp::Solver solver(model, L, long_run(20));
  solver.train();
  EXPECT_NEAR(solver.policy().log.back().lower_bound, ef, 1e-6);
  EXPECT_LE(solver.policy().log.size(), 20u);
  const auto sim = solver.simulate();
  EXPECT_NEAR(sim.mean_cost(), 50.0, 1e-6);
  // first-stage price is the value of stored water, the thermal cost
  EXPECT_NEAR(sim.at(0, 0).duals[model.layout().load_balance_row], 5.0, 1e-9);
}

TEST(Sddp, StochasticTwoStageMatchesExtensiveForm) {
  const auto sys = two_hydro_two_stage();
  const auto sc = generate_scenarios(sys, toys::two_hydro_noise(sys), 8, 5);
  const auto L = sddp::MarkovLattice::independent(2, 8);
  const double ef = oracle::two_stage_extensive_form(sys, sc, L);

  CentralizedModel model(sys, sc);
  sddp::Solver solver(model, L, long_run(300));
  solver.train();
  EXPECT_NEAR(solver.policy().log.back().lower_bound, ef, 1e-6 * std::max(1.0, std::abs(ef)));
}

TEST(Sddp, MarkovTwoStageMatchesExtensiveForm) {
  const auto sys = two_hydro_two_stage();
  const auto sc = generate_scenarios(sys, toys::two_hydro_noise(sys), 6, 9);
  // stage 2 samples split in two states with an asymmetric chain
  auto L = sddp::MarkovLattice::from_labels({{0, 0, 1, 1, 1, 0}, {0, 1, 0, 1, 1, 1}},
                                             {{{0.9, 0.1}, {0.2, 0.8}}});
  ASSERT_TRUE(L.check(6).empty());
  const double ef = oracle::two_stage_extensive_form(sys, sc, L);

  CentralizedModel model(sys, sc);
  sddp::Solver solver(model, L, long_run(300));
  solver.train();
  EXPECT_NEAR(solver.policy().log.back().lower_bound, ef, 1e-6 * std::max(1.0, std::abs(ef)));
}

TEST(Sddp, LowerBoundMonotoneAndValid) {
  const auto sys = toys::two_hydro_four_stage();
  const auto sc = generate_scenarios(sys, toys::two_hydro_noise(sys), 8, 1);
  CentralizedModel model(sys, sc);
  sddp::Solver solver(model, sddp::MarkovLattice::independent(4, 8), long_run(25));
  double prev = -1e300;
  for (int i = 0; i < 25; ++i) {
    const auto log = solver.iterate();
    EXPECT_GE(log.lower_bound, prev - 1e-7 * std::max(1.0, std::abs(prev)));
    prev = log.lower_bound;
  }
  const auto sim = solver.simulate();
  EXPECT_LE(prev, sim.mean_cost() + 3.0 * sim.stderr_cost() + 1e-6);
}

TEST(Sddp, LastStageCutsBelowExactRecourse) {
  const auto sys = toys::two_hydro_four_stage();
  const auto sc = generate_scenarios(sys, toys::two_hydro_noise(sys), 8, 1);
  CentralizedModel model(sys, sc);
  sddp::Solver solver(model, sddp::MarkovLattice::independent(4, 8), long_run(10));
  solver.train();
  const auto& cuts = solver.policy().cuts.at(2, 0);
  ASSERT_FALSE(cuts.empty());
  Rng rng(123);
  for (int trial = 0; trial < 100; ++trial) {
    const std::vector<double> v{rng.uniform() * 40.0, rng.uniform() * 30.0};
    const std::vector<double> lag{rng.uniform() * 30.0, rng.uniform() * 20.0};
    double exact = 0.0;
    for (int s = 0; s < 8; ++s) exact += oracle::stage_cost(sys, sc, 3, s, v, lag) / 8.0;
    const std::vector<double> x{v[0], v[1], lag[0], lag[1]};
    for (const auto& c : cuts) EXPECT_LE(c.value(x), exact + 1e-7 * std::max(1.0, exact));
  }
}

TEST(Sddp, CutTightAtTrialPoint) {
  // the last-stage recourse is exact, so a fresh cut touches it at its trial point
  const auto sys = toys::two_hydro_four_stage();
  const auto sc = generate_scenarios(sys, toys::two_hydro_noise(sys), 8, 2);
  CentralizedModel model(sys, sc);
  sddp::Solver solver(model, sddp::MarkovLattice::independent(4, 8), long_run(1));
  Rng rng(5);
  const auto tr = solver.forward_pass(rng);
  solver.backward_pass(tr);
  const auto& x = tr.states[2];
  double exact = 0.0;
  for (int s = 0; s < 8; ++s) exact += oracle::stage_cost(sys, sc, 3, s, {x[0], x[1]}, {x[2], x[3]}) / 8.0;
  EXPECT_NEAR(solver.policy().cuts.at(2, 0).back().value(x), exact, 1e-7 * std::max(1.0, exact));
}

TEST(Sddp, NoStateIsPlainMyopicDispatch) {
  auto sys = toys::base(3, {10.0, 25.0, 40.0}, 100.0);
  sys.thermals.push_back({"A", 1, 5.0, 20.0});
  sys.thermals.push_back({"B", 1, 30.0, 10.0});
  sys.agents.push_back({1, AgentKind::PriceTaker, std::nullopt});
  const auto sc = deterministic_scenarios(sys, {{}, {}, {}});
  CentralizedModel model(sys, sc);
  EXPECT_EQ(model.state_dimension(), 0);
  sddp::Solver solver(model, sddp::MarkovLattice::independent(3, 1), long_run(5));
  solver.train();
  // 10*5 + (20*5 + 5*30) + (20*5 + 10*30 + 10*100)
  EXPECT_NEAR(solver.policy().log.back().lower_bound, 50.0 + 250.0 + 1400.0, 1e-9);
  for (const auto& c : solver.policy().cuts.at(0, 0)) EXPECT_TRUE(c.gradient.empty());
}

TEST(Sddp, WorthlessWaterHasZeroGradient) {
  // nothing to serve in the second stage, so stored water has no value
  auto sys = toys::two_stage_hydro_thermal();
  sys.demand.demand = {10.0, 0.0};
  const auto sc = toys::two_stage_inflows(sys);
  CentralizedModel model(sys, sc);
  sddp::Solver solver(model, sddp::MarkovLattice::independent(2, 1), long_run(5));
  solver.train();
  EXPECT_NEAR(solver.policy().log.back().lower_bound, 0.0, 1e-9);
  ASSERT_FALSE(solver.policy().cuts.at(0, 0).empty());
  for (const auto& c : solver.policy().cuts.at(0, 0)) {
    EXPECT_NEAR(c.gradient[0], 0.0, 1e-12);
    EXPECT_NEAR(c.intercept, 0.0, 1e-12);
  }
}

TEST(Sddp, SingleStateChainEqualsIndependentSampling) {
  const auto sys = toys::two_hydro_four_stage();
  const auto sc = generate_scenarios(sys, toys::two_hydro_noise(sys), 8, 3);
  FeatureMatrix fm(4, 8, 1);
  for (int t = 0; t < 4; ++t)
    for (int s = 0; s < 8; ++s) fm(t, s, 0) = sc.inflows(t, s, 0);
  const auto chain = estimate_chain(fm, 1, 1);
  CentralizedModel model(sys, sc);
  sddp::Solver a(model, chain, long_run(8));
  sddp::Solver b(model, sddp::MarkovLattice::independent(4, 8), long_run(8));
  a.train();
  b.train();
  ASSERT_EQ(a.policy().log.size(), b.policy().log.size());
  for (std::size_t i = 0; i < a.policy().log.size(); ++i)
    EXPECT_EQ(a.policy().log[i].lower_bound, b.policy().log[i].lower_bound);
  EXPECT_TRUE(a.simulate() == b.simulate());
}

TEST(Sddp, WorkerCountDoesNotChangeResults) {
  const auto sys = toys::two_hydro_four_stage();
  const auto sc = generate_scenarios(sys, toys::two_hydro_noise(sys), 8, 3);
  CentralizedModel model(sys, sc);
  auto one = long_run(6);
  auto four = long_run(6);
  four.workers = 4;
  sddp::Solver a(model, sddp::MarkovLattice::independent(4, 8), one);
  sddp::Solver b(model, sddp::MarkovLattice::independent(4, 8), four);
  a.train();
  b.train();
  EXPECT_EQ(a.policy().log.back().lower_bound, b.policy().log.back().lower_bound);
  EXPECT_TRUE(a.simulate() == b.simulate());
}

TEST(Sddp, StallRuleStops) {
  const auto sys = toys::two_stage_hydro_thermal();
  const auto sc = toys::two_stage_inflows(sys);
  CentralizedModel model(sys, sc);
  sddp::Options o;
  o.max_iterations = 50;
  sddp::Solver solver(model, sddp::MarkovLattice::independent(2, 1), o);
  solver.train();
  EXPECT_LT(solver.policy().log.size(), 10u);
  EXPECT_TRUE(solver.stalled());
}

TEST(Sddp, InvalidLatticeRejected) {
  const auto sys = toys::two_stage_hydro_thermal();
  const auto sc = toys::two_stage_inflows(sys);
  CentralizedModel model(sys, sc);
  auto bad = sddp::MarkovLattice::from_labels({{0}, {0}}, {{{0.5}}});
  EXPECT_THROW(sddp::Solver(model, bad), sddp::SddpError);
  EXPECT_THROW(sddp::Solver(model, sddp::MarkovLattice::independent(3, 1)), sddp::SddpError);
}
