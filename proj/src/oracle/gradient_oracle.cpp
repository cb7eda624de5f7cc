#include "l2pf/oracle/gradient_oracle.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "l2pf/reinforce.hpp"
#include "l2pf/reward.hpp"
#include "l2pf/rng.hpp"
#include "l2pf/synthetic_env.hpp"

namespace l2pf::oracle {

namespace {

QuadratureRule golub_welsch(const Eigen::VectorXd& off_diag, double mu0) {
  const int n = static_cast<int>(off_diag.size()) + 1;
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int k = 0; k + 1 < n; ++k) {
    jacobi(k, k + 1) = off_diag[k];
    jacobi(k + 1, k) = off_diag[k];
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi);
  QuadratureRule rule;
  for (int i = 0; i < n; ++i) {
    rule.nodes.push_back(solver.eigenvalues()[i]);
    const double v0 = solver.eigenvectors()(0, i);
    rule.weights.push_back(mu0 * v0 * v0);
  }
  return rule;
}

}  // namespace

QuadratureRule gauss_hermite(int n) {
  if (n < 1) throw std::invalid_argument("gauss_hermite: n must be >= 1");
  Eigen::VectorXd b(n - 1);
  for (int k = 1; k < n; ++k) b[k - 1] = std::sqrt(k / 2.0);
  return golub_welsch(b, std::sqrt(std::numbers::pi));
}

QuadratureRule gauss_legendre(int n) {
  if (n < 1) throw std::invalid_argument("gauss_legendre: n must be >= 1");
  Eigen::VectorXd b(n - 1);
  for (int k = 1; k < n; ++k) b[k - 1] = k / std::sqrt(4.0 * k * k - 1.0);
  return golub_welsch(b, 2.0);
}

double normal_expectation_hermite(const std::function<double(double)>& g,
                                  double mu, double sigma, int nodes) {
  const auto rule = gauss_hermite(nodes);
  double s = 0.0;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
    s += rule.weights[i] * g(mu + std::numbers::sqrt2 * sigma * rule.nodes[i]);
  }
  return s / std::sqrt(std::numbers::pi);
}

double normal_expectation(const std::function<double(double)>& g, double mu,
                          double sigma, std::vector<double> breakpoints,
                          int nodes_per_piece) {
  static thread_local QuadratureRule rule;
  if (static_cast<int>(rule.nodes.size()) != nodes_per_piece) {
    rule = gauss_legendre(nodes_per_piece);
  }
  const double lo = mu - 12.0 * sigma;
  const double hi = mu + 12.0 * sigma;
  // One piece per sigma keeps the Gaussian factor smooth on every piece.
  for (int k = -11; k <= 11; ++k) breakpoints.push_back(mu + k * sigma);
  std::vector<double> cuts{lo};
  std::sort(breakpoints.begin(), breakpoints.end());
  for (double b : breakpoints) {
    if (b > lo && b < hi && b > cuts.back()) cuts.push_back(b);
  }
  cuts.push_back(hi);
  const double norm = 1.0 / (sigma * std::sqrt(2.0 * std::numbers::pi));
  double total = 0.0;
  for (std::size_t p = 0; p + 1 < cuts.size(); ++p) {
    const double half = 0.5 * (cuts[p + 1] - cuts[p]);
    const double mid = 0.5 * (cuts[p + 1] + cuts[p]);
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
      const double a = mid + half * rule.nodes[i];
      const double z = (a - mu) / sigma;
      total += half * rule.weights[i] * norm * std::exp(-0.5 * z * z) * g(a);
    }
  }
  return total;
}

ExpectedCoefficients expected_coefficients(const std::vector<double>& p,
                                           double mu, double sigma,
                                           const RewardFn& reward,
                                           const std::vector<double>& breakpoints) {
  const int n = static_cast<int>(p.size());
  if (n > 20) throw std::invalid_argument("expected_coefficients: too many filters");
  ExpectedCoefficients out;
  out.d_prob.assign(n, 0.0);
  std::vector<std::uint8_t> bits(n);
  for (std::uint64_t pattern = 0; pattern < (std::uint64_t{1} << n); ++pattern) {
    double prob = 1.0;
    for (int i = 0; i < n; ++i) {
      bits[i] = (pattern >> i) & 1u;
      prob *= bits[i] ? p[i] : 1.0 - p[i];
    }
    const double er_prune = normal_expectation(
        [&](double a) { return reward(bits, a).first; }, mu, sigma, breakpoints);
    // d/dmu of E[R_retrain] in score form, the quantity the estimator targets.
    const double er_retrain = normal_expectation(
        [&](double a) { return reward(bits, a).second; }, mu, sigma, breakpoints);
    const double dmu = normal_expectation(
        [&](double a) { return reward(bits, a).second * (a - mu) / (sigma * sigma); },
        mu, sigma, breakpoints);
    out.expected_r_prune += prob * er_prune;
    out.expected_r_retrain += prob * er_retrain;
    out.d_mu += prob * dmu;
    for (int i = 0; i < n; ++i) {
      double rest = 1.0;
      for (int k = 0; k < n; ++k) {
        if (k != i) rest *= bits[k] ? p[k] : 1.0 - p[k];
      }
      out.d_prob[i] += (bits[i] ? rest : -rest) * er_prune;
    }
  }
  return out;
}

GradientCheck run_gradient_check(int filters, int samples, std::uint64_t seed) {
  if (filters < 1 || filters > 12) {
    throw std::invalid_argument("run_gradient_check: filters must lie in 1..12");
  }
  if (samples < 2) throw std::invalid_argument("run_gradient_check: samples must be >= 2");

  Rng setup = make_stream(seed, "oracle-setup");
  env::SyntheticEnvConfig env_cfg;
  env::SyntheticLayerConfig layer;
  layer.num_filters = filters;
  layer.in_channels = 2;
  layer.kernel_size = 3;
  std::uniform_real_distribution<double> imp(0.0, 3.0);
  for (int i = 0; i < filters; ++i) layer.importance.push_back(imp(setup));
  env_cfg.layers = {layer};
  env_cfg.damage_scale = 1.0;
  env_cfg.recovery_saturation = 4.0;
  env_cfg.seed = seed;
  env::SyntheticEnvironment env(env_cfg);

  reward::RewardConfig rcfg;
  const double acc_base = env.base_accuracy();
  const int layer_index = 0;

  Rng init = make_stream(seed, "oracle-policy");
  const auto params = policy::PolicyParams::initialize(init, false);
  const auto state = env.state_of(layer_index);
  const auto out = policy::policy_forward(params, state);

  GradientCheck check;
  check.filters = filters;
  check.samples = samples;
  check.sigma = 0.3;
  check.keep_probs = out.keep_probs;
  check.mu = out.epoch_mu;

  auto rewards_of = [&](const std::vector<std::uint8_t>& bits, double a) {
    const PruneMask mask(layer_index, bits);
    const double e = reward::epochs_from_action(a, rcfg.beta);
    const double acc = env.evaluate(std::span<const PruneMask>(&mask, 1), e, 0);
    const auto rec = reward::make_record(0, rcfg, filters, mask.pruned_count(), a,
                                         acc_base, acc);
    return std::make_pair(rec.r_prune_raw, rec.r_retrain_raw);
  };

  // Kinks of the integrand in a: the action clamp and full recovery.
  const std::vector<double> kinks{0.0, 1.0, env_cfg.recovery_saturation / rcfg.beta};
  check.expected = expected_coefficients(out.keep_probs, out.epoch_mu, check.sigma,
                                         rewards_of, kinks);
  check.expected_grad =
      policy::policy_backward(params, out, check.expected.d_prob, check.expected.d_mu)
          .values;

  const std::size_t np = policy::param_count();
  std::vector<double> sum(np, 0.0), sum_sq(np, 0.0);
  std::vector<double> csum(filters + 1, 0.0), csum_sq(filters + 1, 0.0);
  Rng rng = make_stream(seed, "oracle-sampling");
  const std::vector<int> layers{layer_index};
  for (int s = 0; s < samples; ++s) {
    auto actions = policy::sample_actions(out, check.sigma, 1, rng, layers);
    const auto& act = actions.front();
    std::vector<std::uint8_t> bits(act.prune_masks[0].bits().begin(),
                                   act.prune_masks[0].bits().end());
    const auto [rp, rr] = rewards_of(bits, act.epoch_action_raw);

    reward::RewardRecord rec;
    rec.sample_index = act.sample_index;
    rec.r_prune_raw = rec.r_prune_norm = rp;
    rec.r_retrain_raw = rec.r_retrain_norm = rr;
    rec.normalized = true;
    reinforce::EpisodeBatch batch{&out, check.sigma, actions, {rec}};
    const auto g = reinforce::estimate_gradient(batch, params);
    for (std::size_t w = 0; w < np; ++w) {
      sum[w] += g.values[w];
      sum_sq[w] += g.values[w] * g.values[w];
    }
    for (int i = 0; i < filters; ++i) {
      const double c = rp * reinforce::bernoulli_score(bits[i], out.keep_probs[i]);
      csum[i] += c;
      csum_sq[i] += c * c;
    }
    const double cm = rr * reinforce::normal_score(act.epoch_action_raw, out.epoch_mu,
                                                   check.sigma);
    csum[filters] += cm;
    csum_sq[filters] += cm * cm;
  }

  auto mean_and_se = [samples](double s, double s2) {
    const double m = s / samples;
    const double var = std::max(0.0, (s2 - samples * m * m) / (samples - 1));
    return std::make_pair(m, std::sqrt(var / samples));
  };
  for (int i = 0; i <= filters; ++i) {
    const auto [m, se] = mean_and_se(csum[i], csum_sq[i]);
    const double target = i < filters ? check.expected.d_prob[i] : check.expected.d_mu;
    check.coeff_mean.push_back(m);
    check.coeff_z.push_back(se > 0.0 ? (m - target) / se : 0.0);
  }
  check.mean_grad.resize(np);
  check.stderr_grad.resize(np);
  for (std::size_t w = 0; w < np; ++w) {
    const auto [m, se] = mean_and_se(sum[w], sum_sq[w]);
    check.mean_grad[w] = m;
    check.stderr_grad[w] = se;
    const double diff = m - check.expected_grad[w];
    const double scale = std::max(std::abs(m), std::abs(check.expected_grad[w]));
    if (se > 1e-12 * std::max(1.0, scale)) {
      const double z = std::abs(diff) / se;
      ++check.params_checked;
      check.max_abs_z = std::max(check.max_abs_z, z);
      if (z > 3.0) ++check.params_beyond_3se;
    } else {
      check.max_deterministic_error =
          std::max(check.max_deterministic_error, std::abs(diff));
    }
  }
  return check;
}

}  // namespace l2pf::oracle
