#pragma once

#include <span>
#include <vector>

namespace l2pf::reward {

enum class LogBase { natural, two };

// Accuracies are percentage points (92.0 means 92 %), as is the bound b.
struct RewardConfig {
  double bound = 2.0;
  double beta = 8.0;
  LogBase log_base = LogBase::natural;

  void validate() const;
};

struct RewardRecord {
  int sample_index = 0;
  double r_prune_raw = 0.0;
  double r_retrain_raw = 0.0;
  double r_prune_norm = 0.0;
  double r_retrain_norm = 0.0;
  double acc_pruned = 0.0;
  bool normalized = false;
};

// (b - max(0, acc_base - acc_pruned)) / b
double acc_term(double bound, double acc_base, double acc_pruned);

// log(N / (N - n)), or -1 when every filter is pruned.
double eff_term(int num_filters, int num_pruned,
                LogBase base = LogBase::natural);

double prune_reward(double acc_term_value, double eff_term_value);

// |a| * (acc_pruned - acc_base), using the untruncated action.
double retrain_reward(double epoch_action_raw, double acc_base,
                      double acc_pruned);

// min(max(0, a), 1) * beta
double epochs_from_action(double epoch_action_raw, double beta);

// Builds the raw part of a record from one evaluated sample.
RewardRecord make_record(int sample_index, const RewardConfig& cfg,
                         int num_filters, int num_pruned,
                         double epoch_action_raw, double acc_base,
                         double acc_pruned);

// Standardizes prune and retrain rewards independently across the batch
// (population statistics). A set whose std is below 1e-12 maps to zeros.
std::vector<RewardRecord> normalize_rewards(
    std::span<const RewardRecord> records);

}  // namespace l2pf::reward
