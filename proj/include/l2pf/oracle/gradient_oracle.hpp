#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "l2pf/policy.hpp"

namespace l2pf::oracle {

struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

// Golub-Welsch rules. Hermite integrates against exp(-x^2) on the real line,
// Legendre against 1 on [-1, 1].
QuadratureRule gauss_hermite(int n);
QuadratureRule gauss_legendre(int n);

// E[g(a)] for a ~ Normal(mu, sigma^2) with the plain 20-node Hermite rule.
double normal_expectation_hermite(const std::function<double(double)>& g,
                                  double mu, double sigma, int nodes = 20);

// Same expectation, integrated piecewise between the given kinks of g with a
// Legendre rule per piece over mu +- 12 sigma. Exact to rounding for piecewise
// polynomial g.
double normal_expectation(const std::function<double(double)>& g, double mu,
                          double sigma, std::vector<double> breakpoints,
                          int nodes_per_piece = 40);

// (R_prune, R_retrain) for a keep-bit vector and raw epoch action.
using RewardFn = std::function<std::pair<double, double>(
    const std::vector<std::uint8_t>& keep_bits, double a_raw)>;

struct ExpectedCoefficients {
  std::vector<double> d_prob;  // d/dp_i E[R_prune]
  double d_mu = 0.0;           // d/dmu E[R_retrain]
  double expected_r_prune = 0.0;
  double expected_r_retrain = 0.0;
};

// Exhaustive over all 2^N keep patterns, quadrature over the epoch action.
ExpectedCoefficients expected_coefficients(const std::vector<double>& keep_probs,
                                           double mu, double sigma,
                                           const RewardFn& reward,
                                           const std::vector<double>& breakpoints);

struct GradientCheck {
  int filters = 0;
  int samples = 0;
  double sigma = 0.0;
  std::vector<double> keep_probs;
  double mu = 0.0;

  ExpectedCoefficients expected;
  std::vector<double> coeff_mean;  // N prune coefficients, then the mu one
  std::vector<double> coeff_z;

  std::vector<double> expected_grad;
  std::vector<double> mean_grad;
  std::vector<double> stderr_grad;
  double max_abs_z = 0.0;          // over parameters with nonzero spread
  int params_beyond_3se = 0;
  int params_checked = 0;
  double max_deterministic_error = 0.0;  // parameters with zero spread
};

// Frozen random policy on a one-layer synthetic environment with `filters`
// filters. Averages `samples` single-sample REINFORCE estimates (raw rewards)
// and compares them against the enumerated expectation.
GradientCheck run_gradient_check(int filters, int samples, std::uint64_t seed);

}  // namespace l2pf::oracle
