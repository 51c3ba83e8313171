#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "peermarket/equilibrium.hpp"
#include "support.hpp"

using namespace peermarket;
using Eigen::MatrixXd;

namespace {

OmegaMatrix low_equilibrium_weights() {
  OmegaMatrix w = OmegaMatrix::Zero(3, 3);
  w(1, 0) = 87;
  w(2, 0) = 16;
  w(1, 2) = 72;
  return w;
}

}  // namespace

TEST(VariationalEquilibrium, MatchesCentralizedOnThreeNode) {
  const Scenario s = builtin("three_node");
  const MarketSolution ve = solve_ve(s);
  const MarketSolution cm = solve_centralized(s);
  EXPECT_EQ(ve.kind, SolutionKind::variational);
  EXPECT_NEAR(ve.sw, cm.sw, 1e-6);
  EXPECT_LE((ve.D - cm.D).lpNorm<Eigen::Infinity>(), 1e-6);
  EXPECT_LE((ve.G - cm.G).lpNorm<Eigen::Infinity>(), 1e-6);
  EXPECT_LE((ve.lambda - cm.lambda).lpNorm<Eigen::Infinity>(), 1e-6);
}

TEST(VariationalEquilibrium, MatchesCentralizedOnRandomScenarios) {
  for (unsigned long seed = 100; seed < 120; ++seed) {
    const Scenario s = random_scenario(seed);
    const MarketSolution ve = solve_ve(s);
    const MarketSolution cm = solve_centralized(s);
    EXPECT_NEAR(ve.sw, cm.sw, 1e-6 * std::max(1.0, std::abs(cm.sw))) << s.name;
    EXPECT_LE((ve.D - cm.D).lpNorm<Eigen::Infinity>(), 1e-5) << s.name;
  }
}

TEST(VariationalEquilibrium, EachAgentIsStationary) {
  const Scenario s = builtin("three_node");
  const MarketSolution ve = solve_ve(s);
  for (int n = 0; n < 3; ++n) EXPECT_LE(check_agent_kkt(s, ve, n).max(), 1e-6) << n;
}

TEST(VariationalEquilibrium, InfeasibleScenarioThrows) {
  Scenario s = builtin("three_node");
  for (auto& p : s.prosumers) {
    p.d_min = p.d_max = 10.0;
    p.g_min = p.g_max = 0.0;
  }
  EXPECT_THROW((void)solve_ve(s), MarketInfeasible);
}

TEST(Parameterized, ZeroWeightsReproduceVariational) {
  const Scenario s = builtin("three_node");
  const GneSample g = solve_parameterized(s, OmegaMatrix::Zero(3, 3));
  EXPECT_TRUE(g.is_gne);
  EXPECT_NEAR(g.solution.sw, solve_ve(s).sw, 1e-6);
  EXPECT_LE((g.recovered_zeta - g.solution.zeta).lpNorm<Eigen::Infinity>(), 1e-12);
}

TEST(Parameterized, RejectsBadWeights) {
  const Scenario s = builtin("three_node");
  OmegaMatrix w = OmegaMatrix::Zero(3, 3);
  w(1, 0) = -1;
  EXPECT_THROW((void)solve_parameterized(s, w), MarketError);
  w = OmegaMatrix::Zero(3, 3);
  w(1, 1) = 2;
  EXPECT_THROW((void)solve_parameterized(s, w), MarketError);
}

TEST(Parameterized, LowEquilibriumOnOptimalFace) {
  const Scenario s = builtin("three_node");
  const ParameterizedMarket pm(s);
  const GneSample g = pm.solve(low_equilibrium_weights());
  ASSERT_TRUE(g.is_gne);
  const auto face = pm.worst_on_face(g);
  ASSERT_TRUE(face.has_value());
  EXPECT_TRUE(face->is_gne);
  EXPECT_TRUE(face->face_extreme);
  EXPECT_LT(face->solution.sw, g.solution.sw);
  EXPECT_NEAR(face->solution.sw, 255.55, 0.01);

  const auto p = oracle::published_low_equilibrium();
  EXPECT_LE((face->solution.D - p.D).lpNorm<Eigen::Infinity>(), 1e-4);
  EXPECT_LE((face->solution.q - p.q).lpNorm<Eigen::Infinity>(), 1e-4);
  EXPECT_NEAR(face->recovered_zeta(1, 0), 87, 1e-4);
  EXPECT_NEAR(face->recovered_zeta(2, 1), 17, 1e-4);
}

TEST(AgentKkt, PublishedLowPointIsStationaryForEveryAgent) {
  const Scenario s = builtin("three_node");
  const auto p = oracle::published_low_equilibrium();
  const MarketSolution c = candidate_from_decisions(s, p.D, p.G, p.q);
  const AgentKktReport r0 = check_agent_kkt(s, c, 0);
  const AgentKktReport r1 = check_agent_kkt(s, c, 1);
  const AgentKktReport r2 = check_agent_kkt(s, c, 2);
  EXPECT_LE(std::max({r0.max(), r1.max(), r2.max()}), 1e-3);
  EXPECT_NEAR(r1.zeta_with(0), 87, 1e-3);
  EXPECT_NEAR(r2.zeta_with(1), 17, 1e-3);
  EXPECT_NEAR(r1.lambda - r0.lambda, 89, 1e-3);
}

TEST(AgentKkt, CentralizedOptimumPassesAndPerturbationFails) {
  const Scenario s = builtin("three_node");
  const MarketSolution m = solve_centralized(s);
  for (int n = 0; n < 3; ++n) EXPECT_LE(check_agent_kkt(s, m, n).max(), 1e-6);
  MarketSolution bad = candidate_from_decisions(s, m.D, m.G, m.q);
  bad.D[0] += 0.5;
  EXPECT_GT(check_agent_kkt(s, bad, 0).max(), 1e-3);
}

TEST(Sweep, GneFlagFollowsViolation) {
  const Scenario s = builtin("three_node");
  SweepStrategy st;
  st.step = 25;
  SweepOptions o;
  o.keep_all = true;
  const SweepResult r = sweep_gne(s, st, o);
  EXPECT_EQ(r.evaluated, 125);
  EXPECT_EQ(r.evaluated, sweep_size(s, st));
  bool saw_rejected = false;
  const double tol = complementarity_tolerance(s);
  for (const auto& g : r.samples) {
    EXPECT_EQ(g.is_gne, g.violation <= tol);
    saw_rejected = saw_rejected || !g.is_gne;
  }
  EXPECT_TRUE(saw_rejected);
  EXPECT_GT(r.valid, 0);
  EXPECT_LT(r.valid, r.evaluated);
}

TEST(Sweep, FinerGridNeverRaisesWorstWelfare) {
  const Scenario s = builtin("three_node");
  const double ve = solve_centralized(s).sw;
  SweepStrategy coarse;
  coarse.step = 50;
  SweepStrategy fine = coarse;
  fine.step = 25;
  const PoaResult a = poa_bound(sweep_gne(s, coarse).samples, ve);
  const PoaResult b = poa_bound(sweep_gne(s, fine).samples, ve);
  EXPECT_LE(b.worst_sw, a.worst_sw + 1e-9);
  EXPECT_GE(b.poa_lower_bound, a.poa_lower_bound - 1e-12);
}

TEST(Sweep, RandomIsSeededAndThreadCountInvariant) {
  const Scenario s = builtin("three_node");
  SweepStrategy st;
  st.kind = SweepStrategy::Kind::random;
  st.support = OmegaSupport::full;
  st.count = 200;
  st.seed = 7;
  SweepOptions one;
  one.threads = 1;
  one.keep_all = true;
  SweepOptions many = one;
  many.threads = 4;
  const SweepResult a = sweep_gne(s, st, one);
  const SweepResult b = sweep_gne(s, st, many);
  ASSERT_FALSE(a.samples.empty());
  ASSERT_EQ(a.samples.size(), b.samples.size());
  EXPECT_EQ(a.valid, b.valid);
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    EXPECT_EQ(a.samples[i].omega, b.samples[i].omega);
    EXPECT_EQ(a.samples[i].solution.sw, b.samples[i].solution.sw);
  }
  st.seed = 8;
  EXPECT_NE(sweep_gne(s, st, one).samples.front().omega, a.samples.front().omega);
}

TEST(Sweep, StreamsEveryEvaluationInOrder) {
  const Scenario s = builtin("three_node");
  SweepStrategy st;
  st.step = 50;
  SweepOptions o;
  std::vector<long> seen;
  o.on_sample = [&](const SampleRecord& rec) {
    seen.push_back(rec.index);
    EXPECT_EQ(rec.omega.size(), 3u);
  };
  const SweepResult r = sweep_gne(s, st, o);
  ASSERT_EQ(static_cast<long>(seen.size()), r.evaluated);
  for (std::size_t i = 0; i < seen.size(); ++i) EXPECT_EQ(seen[i], static_cast<long>(i));
}

TEST(Sweep, BudgetIsEnforced) {
  const Scenario s = builtin("three_node");
  SweepStrategy st;
  SweepOptions o;
  o.max_evaluations = 1000;
  EXPECT_EQ(sweep_size(s, st), 101L * 101 * 101);
  EXPECT_THROW((void)sweep_gne(s, st, o), BudgetExceeded);
}

TEST(Sweep, FaceExplorationAddsLowerPoints) {
  const Scenario s = builtin("three_node");
  const double ve = solve_centralized(s).sw;
  SweepStrategy st;
  st.step = 50;
  SweepOptions plain;
  SweepOptions faces;
  faces.explore_faces = true;
  const SweepResult a = sweep_gne(s, st, plain);
  const SweepResult b = sweep_gne(s, st, faces);
  EXPECT_EQ(a.face_extremes, 0);
  EXPECT_LE(poa_bound(b.samples, ve).worst_sw, poa_bound(a.samples, ve).worst_sw + 1e-9);
  for (const auto& g : b.samples) {
    if (g.face_extreme) EXPECT_TRUE(g.is_gne);
  }
}

TEST(Support, DirectionsBySide) {
  const Scenario s = builtin("three_node");
  using P = std::vector<std::pair<int, int>>;
  EXPECT_EQ(support_directions(s, OmegaSupport::lower), (P{{1, 0}, {2, 0}, {2, 1}}));
  EXPECT_EQ(support_directions(s, OmegaSupport::upper), (P{{0, 1}, {0, 2}, {1, 2}}));
  EXPECT_EQ(support_directions(s, OmegaSupport::full).size(), 6u);
  EXPECT_EQ(parse_support("upper"), OmegaSupport::upper);
  EXPECT_FALSE(parse_support("middle").has_value());
}

TEST(Poa, OnlyVariationalGivesOne) {
  const Scenario s = builtin("three_node");
  const GneSample g = solve_parameterized(s, OmegaMatrix::Zero(3, 3));
  const PoaResult r = poa_bound({g}, solve_centralized(s).sw);
  EXPECT_TRUE(r.defined);
  EXPECT_NEAR(r.poa_lower_bound, 1.0, 1e-9);
}

TEST(Poa, NeedsAValidSample) {
  EXPECT_THROW((void)poa_bound({}, 100.0), std::invalid_argument);
  GneSample bad;
  bad.is_gne = false;
  EXPECT_THROW((void)poa_bound({bad}, 100.0), std::invalid_argument);
}
