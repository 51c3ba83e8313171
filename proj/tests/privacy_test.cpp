#include <gtest/gtest.h>

#include <random>

#include "peermarket/central_market.hpp"
#include "peermarket/privacy.hpp"

using namespace peermarket;
using Eigen::VectorXd;

namespace {

ErrorModel uniform_model(int n, double sd, double sg, double cov) {
  ErrorModel e;
  e.sigma_d = Eigen::MatrixXd::Constant(n, n, sd);
  e.sigma_g = Eigen::MatrixXd::Constant(n, n, sg);
  e.cov = Eigen::MatrixXd::Constant(n, n, cov);
  return e;
}

}  // namespace

TEST(Rho, ThreeNodeByHand) {
  const Scenario s = builtin("three_node");
  std::vector<double> al;
  for (const auto& p : s.prosumers) al.push_back(1.0 / (2 * p.a_tilde) + 1.0 / p.a);
  const VectorXd a = alpha(s);
  for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(a[i], al[static_cast<std::size_t>(i)]);

  const VectorXd r = Eigen::Vector3d(7.0, 2.0, 0.5);
  const double denom = al[0] + al[1] * 2.0 + al[2] * 0.5;
  const VectorXd rho = compute_rho(s, r);
  EXPECT_NEAR(rho[0], 7.0 / denom, 1e-14);
  EXPECT_NEAR(rho[1], 2.0 / denom, 1e-14);
  EXPECT_NEAR(rho[2], 0.5 / denom, 1e-14);
  EXPECT_THROW((void)compute_rho(s, Eigen::Vector3d(1, -1, 1)), PrivacyError);
}

TEST(Rho, RootOwnRatioOnlyInNumerator) {
  const Scenario s = builtin("three_node");
  const VectorXd a = compute_rho(s, Eigen::Vector3d(1, 1, 1));
  const VectorXd b = compute_rho(s, Eigen::Vector3d(5, 1, 1));
  EXPECT_NEAR(b[1], a[1], 1e-15);
  EXPECT_NEAR(b[0], 5 * a[0], 1e-14);
}

TEST(Bias, VanishesWhenCurvaturesMatch) {
  Scenario s = builtin("three_node");
  for (auto& p : s.prosumers) p.a = p.a_tilde;
  const VectorXd bias = expected_bias(s, uniform_model(3, 0.3, 0.2, 0.01), VectorXd::Ones(3));
  EXPECT_LE(bias.cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Bias, VanishesWithoutErrors) {
  const Scenario s = builtin("three_node");
  const ErrorModel e = uniform_model(3, 0.0, 0.0, 0.0);
  EXPECT_EQ(expected_bias(s, e, VectorXd::Ones(3)).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(exact_expected_bias(s, e, VectorXd::Ones(3)).cwiseAbs().maxCoeff(), 0.0);
  const McEstimate mc = monte_carlo_bias(s, e, VectorXd::Ones(3), 2000, 1);
  EXPECT_LE(mc.mean.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Bias, BetaByHand) {
  const Scenario s = builtin("three_node");
  const ErrorModel e = three_node_error_model();
  const ErrorModel c = clamp_covariance(e);
  const VectorXd b = beta(s, c);
  for (int n = 0; n < 3; ++n) {
    const auto& p = s.prosumers[static_cast<std::size_t>(n)];
    double sum = 0.0;
    for (int m = 0; m < 3; ++m) {
      const double sd = c.sigma_d(n, m), sg = c.sigma_g(n, m);
      sum += sd * sd + sg * sg + 2 * c.cov(n, m);
    }
    EXPECT_NEAR(b[n], -(1 / p.a_tilde - 1 / p.a) * sum, 1e-14);
  }
}

TEST(ErrorModel, ValidationAndClamping) {
  const Scenario s = builtin("three_node");
  ErrorModel e = uniform_model(3, 0.1, 0.1, 0.5);
  EXPECT_THROW(check_error_model(s, e), PrivacyError);
  std::vector<ClampNote> notes;
  const ErrorModel c = clamp_covariance(e, &notes);
  EXPECT_NO_THROW(check_error_model(s, c));
  EXPECT_EQ(notes.size(), 9u);
  EXPECT_NEAR(c.cov(0, 1), 0.01, 1e-15);
  e = uniform_model(3, -0.1, 0.1, 0.0);
  EXPECT_THROW(check_error_model(s, e), PrivacyError);
  e = uniform_model(2, 0.1, 0.1, 0.0);
  EXPECT_THROW(check_error_model(s, e), PrivacyError);
}

TEST(Phi, DegenerateBoxEqualsBiasMagnitude) {
  const Scenario s = builtin("three_node");
  const ErrorModel e = clamp_covariance(three_node_error_model());
  const VectorXd r = Eigen::Vector3d(1.0, 1.5, 0.7);
  const VectorXd phi = phi_bound(s, e, r, r);
  const VectorXd bias = expected_bias(s, e, r);
  EXPECT_LE((phi - bias.cwiseAbs()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Phi, DominatesBiasInsideTheBox) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.5, 2.0);
  for (unsigned long seed = 0; seed < 10; ++seed) {
    const Scenario s = random_scenario(seed);
    const ErrorModel e = random_error_model(s, seed);
    const auto n = static_cast<Eigen::Index>(s.size());
    const VectorXd lo = VectorXd::Constant(n, 0.5), hi = VectorXd::Constant(n, 2.0);
    const VectorXd phi = phi_bound(s, e, lo, hi);
    for (int t = 0; t < 100; ++t) {
      VectorXd r(n);
      for (auto& v : r) v = u(rng);
      EXPECT_TRUE((expected_bias(s, e, r).cwiseAbs().array() <= phi.array() + 1e-15).all()) << s.name;
    }
  }
}

TEST(Phi, GrowsWithTheBox) {
  const Scenario s = builtin("three_node");
  const ErrorModel e = clamp_covariance(three_node_error_model());
  const VectorXd narrow = phi_bound(s, e, VectorXd::Constant(3, 0.8), VectorXd::Constant(3, 1.2));
  const VectorXd wide = phi_bound(s, e, VectorXd::Constant(3, 0.5), VectorXd::Constant(3, 2.0));
  EXPECT_TRUE((wide.array() >= narrow.array()).all());
  EXPECT_THROW((void)phi_bound(s, e, VectorXd::Constant(3, 2.0), VectorXd::Constant(3, 1.0)), PrivacyError);
}

TEST(MonteCarlo, DeterministicAcrossThreadCounts) {
  const Scenario s = builtin("three_node");
  const ErrorModel e = clamp_covariance(three_node_error_model());
  const McEstimate a = monte_carlo_bias(s, e, VectorXd::Ones(3), 20000, 9, 1);
  const McEstimate b = monte_carlo_bias(s, e, VectorXd::Ones(3), 20000, 9, 3);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.std_error, b.std_error);
  EXPECT_EQ(a.samples, 20000);
  const McEstimate c = monte_carlo_bias(s, e, VectorXd::Ones(3), 20000, 10, 1);
  EXPECT_NE(a.mean, c.mean);
  EXPECT_THROW((void)monte_carlo_bias(s, e, VectorXd::Ones(3), 999, 9), PrivacyError);
}

TEST(MonteCarlo, AgreesWithExactExpectation) {
  const Scenario s = builtin("three_node");
  const ErrorModel e = clamp_covariance(three_node_error_model());
  const VectorXd r = VectorXd::Ones(3);
  const McEstimate mc = monte_carlo_bias(s, e, r, 100000, 5);
  const VectorXd exact = exact_expected_bias(s, e, r);
  for (int n = 0; n < 3; ++n) EXPECT_LE(std::abs(mc.mean[n] - exact[n]), 4 * mc.std_error[n] + 1e-12) << n;
}

TEST(MonteCarlo, ControlVariateKeepsMeanAndShrinksSpread) {
  const Scenario s = builtin("three_node");
  const ErrorModel e = clamp_covariance(three_node_error_model());
  const VectorXd r = VectorXd::Ones(3);
  const McEstimate cv = monte_carlo_bias(s, e, r, 50000, 2, 0, true);
  const McEstimate raw = monte_carlo_bias(s, e, r, 50000, 2, 0, false);
  for (int n = 0; n < 3; ++n) {
    EXPECT_LT(cv.std_error[n], raw.std_error[n]);
    EXPECT_LE(std::abs(cv.mean[n] - raw.mean[n]), 4 * raw.std_error[n]);
  }
}

TEST(BiasReport, CollectsClampsAndNormalization) {
  const Scenario s = builtin("three_node");
  const VectorXd one = VectorXd::Ones(3);
  const BiasReport r = bias_report(s, three_node_error_model(), one, 0.5 * one, 2.0 * one, 0, 1);
  EXPECT_NEAR(r.ve_sw, solve_centralized(s).sw, 1e-6);
  EXPECT_NEAR(r.phi_percent, 100 * r.phi.sum() / r.ve_sw, 1e-12);
  EXPECT_EQ(r.samples, 0);
  EXPECT_EQ(r.mc_mean.size(), 0);
}

TEST(Surface, GridCoversEveryPairAndMarksExtremes) {
  const Scenario s = builtin("three_node");
  const VectorXd one = VectorXd::Ones(3);
  const std::vector<double> grid{1, 5, 10, 20};
  const BiasSurface surf =
      bias_vs_utility_params(s, three_node_error_model(), grid, grid, 60.0, 0.5 * one, 2.0 * one);
  ASSERT_EQ(surf.points.size(), 16u);
  double lo = surf.points[surf.argmin].percent, hi = surf.points[surf.argmax].percent;
  for (const auto& p : surf.points) {
    EXPECT_GE(p.percent, lo);
    EXPECT_LE(p.percent, hi);
    EXPECT_GT(p.ve_sw, 0.0);
    EXPECT_NEAR(p.percent, 100 * p.phi_sum / p.ve_sw, 1e-12);
  }
  EXPECT_LT(lo, hi);
}
