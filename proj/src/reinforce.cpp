#include "l2pf/reinforce.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace l2pf::reinforce {

double bernoulli_score(int a, double p) {
  if (a != 0 && a != 1) throw std::invalid_argument("bernoulli_score: a must be 0 or 1");
  if (!(p >= policy::kProbEps && p <= 1.0 - policy::kProbEps)) {
    throw std::invalid_argument("bernoulli_score: p=" + std::to_string(p) +
                                " outside the clamp range");
  }
  return (a - p) / (p * (1.0 - p));
}

double normal_score(double a, double mu, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("normal_score: sigma must be > 0");
  return (a - mu) / (sigma * sigma);
}

policy::ParamGradient estimate_gradient(const EpisodeBatch& batch,
                                        const policy::PolicyParams& params) {
  if (!batch.policy_output) {
    throw std::invalid_argument("estimate_gradient: batch has no policy output");
  }
  const auto& out = *batch.policy_output;
  if (batch.actions.empty() || batch.actions.size() != batch.rewards.size()) {
    throw std::invalid_argument(
        "estimate_gradient: actions and rewards must be non-empty and aligned");
  }
  const std::size_t n = out.keep_probs.size();
  policy::ParamGradient total = policy::ParamGradient::zeros();
  std::vector<double> coeffs(n);
  for (std::size_t j = 0; j < batch.actions.size(); ++j) {
    const auto& action = batch.actions[j];
    const auto& rec = batch.rewards[j];
    if (action.sample_index != rec.sample_index) {
      throw std::invalid_argument("estimate_gradient: sample " +
                                  std::to_string(j) + " is misaligned");
    }
    if (static_cast<std::size_t>(action.total_filters()) != n) {
      throw std::invalid_argument("estimate_gradient: action has " +
                                  std::to_string(action.total_filters()) +
                                  " bits, policy has " + std::to_string(n));
    }
    std::size_t i = 0;
    for (const auto& mask : action.prune_masks) {
      for (auto bit : mask.bits()) {
        coeffs[i] = rec.r_prune_norm * bernoulli_score(bit, out.keep_probs[i]);
        ++i;
      }
    }
    const double h = rec.r_retrain_norm *
                     normal_score(action.epoch_action_raw, out.epoch_mu, batch.sigma);
    total += policy::policy_backward(params, out, coeffs, h);
  }
  return total;
}

OptimizerState OptimizerState::make(double learning_rate, double momentum) {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("momentum must lie in [0, 1)");
  }
  OptimizerState s;
  s.learning_rate = learning_rate;
  s.momentum = momentum;
  s.velocity.assign(policy::param_count(), 0.0);
  return s;
}

void apply_update(policy::PolicyParams& params,
                  const policy::ParamGradient& grad, OptimizerState& opt) {
  if (params.values.size() != grad.values.size() ||
      opt.velocity.size() != grad.values.size()) {
    throw std::invalid_argument("apply_update: shape mismatch");
  }
  if (!grad.all_finite()) {
    throw std::invalid_argument("apply_update: non-finite gradient, update rejected");
  }
  for (std::size_t i = 0; i < grad.values.size(); ++i) {
    opt.velocity[i] = opt.momentum * opt.velocity[i] + grad.values[i];
    params.values[i] += opt.learning_rate * opt.velocity[i];
  }
}

double clip_by_global_norm(policy::ParamGradient& grad, double max_norm) {
  const double norm = grad.norm();
  if (max_norm > 0.0 && norm > max_norm) grad *= max_norm / norm;
  return norm;
}

}  // namespace l2pf::reinforce
