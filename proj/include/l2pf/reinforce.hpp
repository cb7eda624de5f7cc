#pragma once

#include <span>
#include <vector>

#include "l2pf/core.hpp"
#include "l2pf/policy.hpp"
#include "l2pf/reward.hpp"

namespace l2pf::reinforce {

// d/dp log Bernoulli(a; p) = (a - p) / (p (1 - p)). p must lie in the
// policy's clamp range.
double bernoulli_score(int a, double p);

// d/dmu log Normal(a; mu, sigma^2) = (a - mu) / sigma^2, with a the raw action.
double normal_score(double a, double mu, double sigma);

// One episode: the forward pass that produced the actions, the sigma used to
// sample them, and the rewards aligned by sample index. The estimator weights
// each sample by r_prune_norm / r_retrain_norm.
struct EpisodeBatch {
  const policy::PolicyOutput* policy_output = nullptr;
  double sigma = 0.3;
  std::vector<ActionSet> actions;
  std::vector<reward::RewardRecord> rewards;
};

// Score-function estimate summed over the M samples:
//   sum_j [ Rp_j * sum_i score_B(a_ij, p_i) dp_i/dw
//         + Rr_j * score_N(a_j, mu, sigma) dmu/dw ]
policy::ParamGradient estimate_gradient(const EpisodeBatch& batch,
                                        const policy::PolicyParams& params);

struct OptimizerState {
  double learning_rate = 0.005;
  double momentum = 0.9;
  std::vector<double> velocity;

  static OptimizerState make(double learning_rate, double momentum);
};

// Momentum gradient ascent:
//   v <- momentum * v + g;  theta <- theta + lr * v
// Throws (leaving params and state untouched) on a non-finite gradient.
void apply_update(policy::PolicyParams& params,
                  const policy::ParamGradient& grad, OptimizerState& opt);

// Rescales grad to global norm max_norm if it is larger. max_norm <= 0 is a
// no-op. Returns the norm before clipping.
double clip_by_global_norm(policy::ParamGradient& grad, double max_norm);

}  // namespace l2pf::reinforce
