#include "l2pf/reward.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace l2pf::reward {

void RewardConfig::validate() const {
  if (!(bound > 0.0)) throw std::invalid_argument("reward: bound must be > 0");
  if (!(beta > 0.0)) throw std::invalid_argument("reward: beta must be > 0");
}

double acc_term(double bound, double acc_base, double acc_pruned) {
  if (!(bound > 0.0)) throw std::invalid_argument("acc_term: bound must be > 0");
  return (bound - std::max(0.0, acc_base - acc_pruned)) / bound;
}

double eff_term(int num_filters, int num_pruned, LogBase base) {
  if (num_filters < 1) throw std::invalid_argument("eff_term: N must be >= 1");
  if (num_pruned < 0 || num_pruned > num_filters) {
    throw std::invalid_argument("eff_term: n=" + std::to_string(num_pruned) +
                                " outside [0, N=" +
                                std::to_string(num_filters) + "]");
  }
  const int remaining = num_filters - num_pruned;
  if (remaining == 0) return -1.0;
  const double ratio =
      static_cast<double>(num_filters) / static_cast<double>(remaining);
  return base == LogBase::two ? std::log2(ratio) : std::log(ratio);
}

double prune_reward(double acc_term_value, double eff_term_value) {
  return acc_term_value * eff_term_value;
}

double retrain_reward(double epoch_action_raw, double acc_base,
                      double acc_pruned) {
  return std::abs(epoch_action_raw) * (acc_pruned - acc_base);
}

double epochs_from_action(double epoch_action_raw, double beta) {
  if (!(beta > 0.0)) {
    throw std::invalid_argument("epochs_from_action: beta must be > 0");
  }
  return std::min(std::max(0.0, epoch_action_raw), 1.0) * beta;
}

RewardRecord make_record(int sample_index, const RewardConfig& cfg,
                         int num_filters, int num_pruned,
                         double epoch_action_raw, double acc_base,
                         double acc_pruned) {
  RewardRecord r;
  r.sample_index = sample_index;
  r.acc_pruned = acc_pruned;
  r.r_prune_raw =
      prune_reward(acc_term(cfg.bound, acc_base, acc_pruned),
                   eff_term(num_filters, num_pruned, cfg.log_base));
  r.r_retrain_raw = retrain_reward(epoch_action_raw, acc_base, acc_pruned);
  return r;
}

namespace {

template <typename Get, typename Set>
void standardize(std::vector<RewardRecord>& records, Get get, Set set) {
  const double m = static_cast<double>(records.size());
  double mean = 0.0;
  for (const auto& r : records) mean += get(r);
  mean /= m;
  double var = 0.0;
  for (const auto& r : records) {
    const double d = get(r) - mean;
    var += d * d;
  }
  const double sd = std::sqrt(var / m);
  for (auto& r : records) set(r, sd < 1e-12 ? 0.0 : (get(r) - mean) / sd);
}

}  // namespace

std::vector<RewardRecord> normalize_rewards(
    std::span<const RewardRecord> records) {
  std::vector<RewardRecord> out(records.begin(), records.end());
  if (out.empty()) return out;
  standardize(
      out, [](const RewardRecord& r) { return r.r_prune_raw; },
      [](RewardRecord& r, double v) { r.r_prune_norm = v; });
  standardize(
      out, [](const RewardRecord& r) { return r.r_retrain_raw; },
      [](RewardRecord& r, double v) { r.r_retrain_norm = v; });
  for (auto& r : out) r.normalized = true;
  return out;
}

}  // namespace l2pf::reward
