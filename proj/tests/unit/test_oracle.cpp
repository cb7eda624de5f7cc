#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "l2pf/oracle/gradient_oracle.hpp"

using namespace l2pf::oracle;

TEST(Quadrature, HermiteMoments) {
  const auto r = gauss_hermite(20);
  ASSERT_EQ(r.nodes.size(), 20u);
  // int x^(2k) exp(-x^2) = Gamma(k + 1/2)
  for (int k = 0; k <= 10; ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < r.nodes.size(); ++i) s += r.weights[i] * std::pow(r.nodes[i], 2 * k);
    EXPECT_NEAR(s / std::tgamma(k + 0.5), 1.0, 1e-10) << k;
  }
}

TEST(Quadrature, LegendreMoments) {
  const auto r = gauss_legendre(12);
  for (int k = 0; k < 24; ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < r.nodes.size(); ++i) s += r.weights[i] * std::pow(r.nodes[i], k);
    EXPECT_NEAR(s, k % 2 ? 0.0 : 2.0 / (k + 1), 1e-12) << k;
  }
}

TEST(Quadrature, NormalExpectations) {
  const auto sq = [](double a) { return a * a; };
  EXPECT_NEAR(normal_expectation_hermite(sq, 0.3, 0.5), 0.09 + 0.25, 1e-12);
  EXPECT_NEAR(normal_expectation(sq, 0.3, 0.5, {}), 0.34, 1e-12);
  // E|a| for a ~ N(mu, s^2), a kinked integrand.
  const double mu = 0.2, s = 0.4;
  const double exact = s * std::sqrt(2.0 / std::numbers::pi) * std::exp(-mu * mu / (2 * s * s)) +
                       mu * std::erf(mu / (s * std::sqrt(2.0)));
  const auto abs_fn = [](double a) { return std::abs(a); };
  EXPECT_NEAR(normal_expectation(abs_fn, mu, s, {0.0}), exact, 1e-12);
}

TEST(ExpectedCoefficients, SingleFilterByHand) {
  // R_prune = 1 if kept, -1 if pruned: E = p - (1 - p), d/dp = 2.
  const auto reward = [](const std::vector<std::uint8_t>& bits, double a) {
    return std::make_pair(bits[0] ? 1.0 : -1.0, a);
  };
  const auto c = expected_coefficients({0.3}, 0.4, 0.2, reward, {});
  EXPECT_NEAR(c.d_prob[0], 2.0, 1e-12);
  EXPECT_NEAR(c.expected_r_prune, -0.4, 1e-12);
  // d/dmu E[a] = 1
  EXPECT_NEAR(c.d_mu, 1.0, 1e-10);
}

TEST(GradientCheck, SmallRunIsConsistent) {
  const auto c = run_gradient_check(2, 20000, 3);
  EXPECT_EQ(c.coeff_mean.size(), 3u);
  EXPECT_GT(c.params_checked, 1000);
  EXPECT_EQ(c.max_deterministic_error, 0.0);
  for (double z : c.coeff_z) EXPECT_LT(std::abs(z), 4.0);
}
