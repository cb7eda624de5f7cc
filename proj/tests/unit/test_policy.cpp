#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "l2pf/policy.hpp"
#include "support/oracles.hpp"

using namespace l2pf;
using namespace l2pf::policy;

namespace {

WeightTensor random_state(Rng& rng, int n, int c, int k) {
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(n) * c * k * k);
  for (auto& x : v) x = d(rng);
  return WeightTensor(n, c, k, v);
}

PolicyOutput fixed_output(std::vector<double> p, double mu) {
  PolicyOutput out;
  out.segment_sizes = {static_cast<int>(p.size())};
  out.keep_probs = std::move(p);
  out.epoch_mu = mu;
  return out;
}

}  // namespace

TEST(PolicyLayout, ParameterCountIsFixed) {
  // conv: 8*1*3+8, 16*8*3+16, 32*16*3+32, 32*32*3+32; heads: 2 * (32*16+16 + 16+1)
  EXPECT_EQ(param_count(), 32u + 400u + 1568u + 3104u + 2u * 545u);
  EXPECT_EQ(PolicyParams::zeros().values.size(), param_count());
}

TEST(PolicyForward, ZeroFinalLayersGiveHalf) {
  Rng rng = make_stream(1, "t");
  const auto params = PolicyParams::initialize(rng);
  const auto out = policy_forward(params, random_state(rng, 6, 3, 3));
  ASSERT_EQ(out.keep_probs.size(), 6u);
  for (double p : out.keep_probs) EXPECT_EQ(p, 0.5);
  EXPECT_EQ(out.epoch_mu, 0.5);
}

TEST(PolicyForward, DeterministicAndShapeAgnostic) {
  Rng rng = make_stream(2, "t");
  const auto params = PolicyParams::initialize(rng, false);
  const auto s16 = random_state(rng, 16, 4, 3);
  const auto a = policy_forward(params, s16);
  const auto b = policy_forward(params, s16);
  EXPECT_EQ(a.keep_probs, b.keep_probs);
  EXPECT_EQ(a.epoch_mu, b.epoch_mu);
  EXPECT_EQ(a.keep_probs.size(), 16u);
  EXPECT_EQ(policy_forward(params, random_state(rng, 64, 4, 3)).keep_probs.size(), 64u);
  EXPECT_EQ(policy_forward(params, random_state(rng, 3, 1, 1)).keep_probs.size(), 3u);
}

TEST(PolicyForward, BlockInputConcatenatesSegments) {
  Rng rng = make_stream(3, "t");
  const auto params = PolicyParams::initialize(rng, false);
  const std::vector<WeightTensor> states{random_state(rng, 4, 2, 3),
                                         random_state(rng, 5, 4, 3)};
  const auto out = policy_forward(params, states);
  EXPECT_EQ(out.keep_probs.size(), 9u);
  EXPECT_EQ(out.segment_sizes, (std::vector<int>{4, 5}));
}

TEST(PolicyForward, ProbabilityClampHolds) {
  Rng rng = make_stream(4, "t");
  for (int trial = 0; trial < 20; ++trial) {
    auto params = PolicyParams::initialize(rng, false);
    for (auto& v : params.values) v *= 40.0;
    const auto out = policy_forward(params, random_state(rng, 12, 3, 3));
    for (double p : out.keep_probs) {
      EXPECT_GE(p, kProbEps);
      EXPECT_LE(p, 1.0 - kProbEps);
    }
    // The sigmoid may round to exactly 0 or 1 at this scale.
    EXPECT_GE(out.epoch_mu, 0.0);
    EXPECT_LE(out.epoch_mu, 1.0);
  }
}

TEST(PolicyForward, RejectsNonFiniteParams) {
  Rng rng = make_stream(5, "t");
  auto params = PolicyParams::initialize(rng);
  params.values[7] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(policy_forward(params, random_state(rng, 2, 1, 3)), std::invalid_argument);
}

TEST(PolicyForward, FilterPermutationPermutesProbabilities) {
  Rng rng = make_stream(6, "t");
  const auto params = PolicyParams::initialize(rng, false);
  for (int trial = 0; trial < 10; ++trial) {
    const auto s = random_state(rng, 10, 3, 3);
    std::vector<int> perm(10);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> v;
    for (int i : perm) {
      const auto f = s.filter(i);
      v.insert(v.end(), f.begin(), f.end());
    }
    const auto a = policy_forward(params, s);
    const auto b = policy_forward(params, WeightTensor(10, 3, 3, v));
    for (int i = 0; i < 10; ++i) EXPECT_NEAR(b.keep_probs[i], a.keep_probs[perm[i]], 1e-12);
    EXPECT_NEAR(a.epoch_mu, b.epoch_mu, 1e-12);
  }
}

TEST(PolicyBackward, ZeroCoefficientsGiveZeroGradient) {
  Rng rng = make_stream(7, "t");
  const auto params = PolicyParams::initialize(rng, false);
  const auto out = policy_forward(params, random_state(rng, 5, 2, 3));
  const std::vector<double> g(5, 0.0);
  const auto grad = policy_backward(params, out, g, 0.0);
  for (double x : grad.values) EXPECT_EQ(x, 0.0);
}

TEST(PolicyBackward, LinearInCoefficients) {
  Rng rng = make_stream(8, "t");
  const auto params = PolicyParams::initialize(rng, false);
  const auto out = policy_forward(params, random_state(rng, 5, 2, 3));
  const std::vector<double> g{0.3, -1.0, 2.0, 0.5, -0.7};
  const std::vector<double> g2{0.6, -2.0, 4.0, 1.0, -1.4};
  const auto a = policy_backward(params, out, g, 0.8);
  const auto b = policy_backward(params, out, g2, 1.6);
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    EXPECT_NEAR(b.values[i], 2.0 * a.values[i], 1e-12 * (1.0 + std::abs(a.values[i])));
  }
}

TEST(PolicyBackward, StaleCacheRejected) {
  Rng rng = make_stream(9, "t");
  auto params = PolicyParams::initialize(rng, false);
  const auto out = policy_forward(params, random_state(rng, 3, 2, 3));
  params.values[0] += 1e-3;
  const std::vector<double> g(3, 1.0);
  EXPECT_THROW(policy_backward(params, out, g, 1.0), std::invalid_argument);
  EXPECT_THROW(policy_backward(params, out, std::vector<double>(2, 1.0), 1.0),
               std::invalid_argument);
}

// 20 random instances over N in {1, 4, 16} and c*k*k in {9, 144}.
TEST(PolicyBackward, MatchesFiniteDifferences) {
  Rng rng = make_stream(10, "fd");
  const int ns[] = {1, 4, 16};
  const std::pair<int, int> shapes[] = {{1, 3}, {16, 3}};
  std::normal_distribution<double> d(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = ns[trial % 3];
    const auto [c, k] = shapes[(trial / 3) % 2];
    const auto params = PolicyParams::initialize(rng, false);
    std::vector<WeightTensor> states{random_state(rng, n, c, k)};
    std::vector<double> g(n);
    for (auto& x : g) x = d(rng);
    const auto r = oracles::finite_difference_check(params, states, g, d(rng));
    EXPECT_LT(r.max_rel_error, 1e-4) << "trial " << trial << " N=" << n << " ck2=" << c * k * k;
    EXPECT_GT(r.checked, static_cast<int>(param_count()) / 2);
  }
}

TEST(SampleActions, KeepBitsFollowProbabilities) {
  const auto out = fixed_output({0.3, 0.9}, 0.5);
  Rng rng = make_stream(11, "t");
  const std::vector<int> layers{4};
  const auto acts = sample_actions(out, 0.3, 20000, rng, layers);
  ASSERT_EQ(acts.size(), 20000u);
  double k0 = 0, k1 = 0;
  for (const auto& a : acts) {
    ASSERT_EQ(a.prune_masks.size(), 1u);
    EXPECT_EQ(a.prune_masks[0].layer_index(), 4);
    k0 += a.prune_masks[0].keeps(0);
    k1 += a.prune_masks[0].keeps(1);
  }
  EXPECT_NEAR(k0 / 20000, 0.3, 4 * std::sqrt(0.3 * 0.7 / 20000));
  EXPECT_NEAR(k1 / 20000, 0.9, 4 * std::sqrt(0.9 * 0.1 / 20000));
}

TEST(SampleActions, NearCertainKeep) {
  // Pruned bits over 16 * 10^4 draws ~ Binomial(160000, 1e-4): mean 16, sd 4.
  const auto out = fixed_output(std::vector<double>(16, 1.0 - kProbEps), 0.5);
  const std::vector<int> layers{0};
  const auto acts = sample_actions(out, 0.3, 10000, std::uint64_t{12}, layers);
  int pruned = 0;
  for (const auto& a : acts) pruned += a.total_pruned();
  EXPECT_LE(pruned, 48);
}

TEST(SampleActions, EpochActionMean) {
  const double sigma = 0.05;
  const auto out = fixed_output({0.5}, 0.5);
  const std::vector<int> layers{0};
  const auto acts = sample_actions(out, sigma, 10000, std::uint64_t{13}, layers);
  double mean = 0.0;
  for (const auto& a : acts) mean += a.epoch_action_raw;
  EXPECT_NEAR(mean / 10000, 0.5, 3 * sigma / 100);
}

TEST(SampleActions, RawActionIsNotTruncated) {
  const auto out = fixed_output({0.5}, 0.5);
  const std::vector<int> layers{0};
  const auto acts = sample_actions(out, 1.0, 2000, std::uint64_t{14}, layers);
  const bool below = std::any_of(acts.begin(), acts.end(),
                                 [](const ActionSet& a) { return a.epoch_action_raw < 0.0; });
  const bool above = std::any_of(acts.begin(), acts.end(),
                                 [](const ActionSet& a) { return a.epoch_action_raw > 1.0; });
  EXPECT_TRUE(below);
  EXPECT_TRUE(above);
}

TEST(SampleActions, SeedDeterminism) {
  const auto out = fixed_output({0.2, 0.5, 0.8}, 0.4);
  const std::vector<int> layers{1};
  const auto a = sample_actions(out, 0.3, 50, std::uint64_t{99}, layers);
  const auto b = sample_actions(out, 0.3, 50, std::uint64_t{99}, layers);
  for (std::size_t j = 0; j < a.size(); ++j) {
    EXPECT_EQ(a[j].prune_masks, b[j].prune_masks);
    EXPECT_EQ(a[j].epoch_action_raw, b[j].epoch_action_raw);
    EXPECT_EQ(a[j].sample_index, static_cast<int>(j));
  }
}

TEST(SampleActions, SegmentsMapToLayers) {
  auto out = fixed_output({0.5, 0.5, 0.5, 0.5, 0.5}, 0.5);
  out.segment_sizes = {2, 3};
  const std::vector<int> layers{3, 4};
  const auto acts = sample_actions(out, 0.3, 3, std::uint64_t{1}, layers);
  for (const auto& a : acts) {
    ASSERT_EQ(a.prune_masks.size(), 2u);
    EXPECT_EQ(a.prune_masks[0].layer_index(), 3);
    EXPECT_EQ(a.prune_masks[0].size(), 2);
    EXPECT_EQ(a.prune_masks[1].layer_index(), 4);
    EXPECT_EQ(a.prune_masks[1].size(), 3);
  }
  EXPECT_THROW(sample_actions(out, 0.3, 3, std::uint64_t{1}, std::vector<int>{3}),
               std::invalid_argument);
  EXPECT_THROW(sample_actions(out, 0.3, 0, std::uint64_t{1}, layers), std::invalid_argument);
}

TEST(Sigma, ZeroRewardsDecayToFloor) {
  auto s = SigmaSchedule::make(0.3, 0.05, 0.5, 0.9);
  const std::vector<double> zeros(5, 0.0);
  for (int i = 0; i < 200; ++i) s = update_sigma(s, zeros);
  EXPECT_NEAR(s.sigma, 0.05, 1e-12);
}

TEST(Sigma, ConstantRewardLimit) {
  auto s = SigmaSchedule::make(0.3, 0.05, 0.5, 0.9);
  const std::vector<double> r{1.0, -1.0, 1.0, -1.0, 1.0};
  for (int i = 0; i < 400; ++i) s = update_sigma(s, r);
  EXPECT_NEAR(s.sigma, 0.5, 1e-9);
}

TEST(Sigma, AlwaysWithinBounds) {
  Rng rng = make_stream(15, "t");
  std::normal_distribution<double> d(0.0, 50.0);
  auto s = SigmaSchedule::make(0.3, 0.05, 0.5, 0.9, 1.0);
  for (int i = 0; i < 500; ++i) {
    std::vector<double> r(5);
    for (auto& x : r) x = (i % 50 < 25) ? d(rng) : 0.0;
    s = update_sigma(s, r);
    EXPECT_GE(s.sigma, 0.05);
    EXPECT_LE(s.sigma, 1.0);
    EXPECT_EQ(s.sigma, std::clamp(0.5 * s.running_abs_retrain_reward, 0.05, 1.0));
  }
}

TEST(Sigma, RejectsBadConstants) {
  EXPECT_THROW(SigmaSchedule::make(0.3, 0.0, 0.5, 0.9), std::invalid_argument);
  EXPECT_THROW(SigmaSchedule::make(0.3, 0.05, 0.5, 1.0), std::invalid_argument);
  EXPECT_THROW(SigmaSchedule::make(0.3, 0.05, 0.5, 0.9, 0.01), std::invalid_argument);
  EXPECT_THROW(update_sigma(SigmaSchedule::make(0.3, 0.05, 0.5, 0.9), {}),
               std::invalid_argument);
}

TEST(Checkpoint, RoundTripIsExact) {
  Rng rng = make_stream(16, "t");
  const auto params = PolicyParams::initialize(rng, false);
  std::stringstream ss;
  save_checkpoint(params, ss);
  const auto text = ss.str();
  EXPECT_EQ(text.rfind("l2pf-policy 1\n", 0), 0u);
  const auto loaded = load_checkpoint(ss);
  EXPECT_EQ(loaded.values, params.values);
}

TEST(Checkpoint, RejectsForeignFiles) {
  std::stringstream bad("not-a-policy\n");
  EXPECT_THROW(load_checkpoint(bad), std::runtime_error);
  Rng rng = make_stream(17, "t");
  std::stringstream ss;
  save_checkpoint(PolicyParams::initialize(rng), ss);
  auto text = ss.str();
  text.resize(text.size() / 2);
  std::stringstream truncated(text);
  EXPECT_THROW(load_checkpoint(truncated), std::runtime_error);
}
