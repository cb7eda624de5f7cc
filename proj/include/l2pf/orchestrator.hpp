#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "l2pf/core.hpp"
#include "l2pf/environment.hpp"
#include "l2pf/policy.hpp"
#include "l2pf/reward.hpp"

namespace l2pf::orchestrator {

enum class Order { forwards, backwards };
enum class Granularity { layer_wise, block_wise };
// per_unit re-measures acc_base after every commit; frozen_global keeps the
// original model's accuracy for the whole run.
enum class AccBaseMode { per_unit, frozen_global };

struct ScheduleConfig {
  Order order = Order::backwards;
  Granularity granularity = Granularity::layer_wise;
  int episodes_per_unit = 200;
  int samples = 5;  // M
  reward::RewardConfig reward;
  bool epoch_learning = true;
  double fixed_epochs = 8.0;
  double final_finetune_epochs = 150.0;
  int early_stop_patience = 50;  // 0 disables early stopping
  AccBaseMode acc_base_mode = AccBaseMode::per_unit;
  std::uint64_t seed = 0;
  int parallel_eval = 1;

  double learning_rate = 0.005;
  double momentum = 0.9;
  double clip_norm = 10.0;  // <= 0 disables clipping

  double sigma_initial = 0.3;
  double sigma_min = 0.05;
  double sigma_max = 1.0;
  double c_sigma = 0.5;
  double sigma_ema_decay = 0.9;

  void validate() const;
};

// A single layer, or the two layers of a residual block, pruned by one agent.
struct Unit {
  int unit_id = 0;
  std::vector<int> layers;
};

// Prunable units in visiting order. Non-prunable layers (such as the first
// convolution) are never visited.
std::vector<Unit> plan_units(const ModelTopology& topology,
                             Granularity granularity, Order order);

struct SampleLog {
  int episode = 0;
  ActionSet action;
  double e_retrain = 0.0;
  double acc_base = 0.0;
  reward::RewardRecord reward;
};

struct PruneSession {
  Unit unit;
  double acc_base_current = 0.0;
  std::vector<SampleLog> samples;
  std::vector<PruneMask> best_masks;
  double total_eval_epochs_spent = 0.0;
  int episodes_run = 0;
  bool committed = false;
  double committed_acc = 0.0;
  std::optional<double> committed_test_acc;
  std::vector<double> final_keep_probs;
  double final_mu = 0.5;
  double final_sigma = 0.0;
};

// Receives progress as it happens; the CLI streams the episode log through it.
class RunObserver {
 public:
  virtual ~RunObserver() = default;
  virtual void on_sample(const Unit& /*unit*/, const SampleLog& /*sample*/) {}
  virtual void on_episode(const Unit& /*unit*/, int /*episode*/,
                          double /*best_r_prune*/, double /*sigma*/) {}
  virtual void on_unit_done(const PruneSession& /*session*/) {}
  virtual void on_policy_trained(const Unit& /*unit*/,
                                 const policy::PolicyParams& /*params*/) {}
};

// Trains `params` on one unit for up to E episodes. Each episode runs one
// forward pass, samples M actions, evaluates them, normalizes the rewards,
// takes one ascent step and updates sigma.
PruneSession run_unit(env::Environment& env, policy::PolicyParams& params,
                      const ScheduleConfig& cfg, const Unit& unit,
                      double acc_base, RunObserver* observer = nullptr);

// Evaluated sample with maximal raw R_prune. Ties go to more pruned filters,
// then to the lexicographically smaller bitstring. Samples that prune every
// filter of a layer are never selected; if nothing else exists the unit is
// left unpruned.
std::vector<PruneMask> select_best_mask(const PruneSession& session);

struct LayerReport {
  int layer = 0;
  int kept = 0;
  int pruned = 0;
  double layer_cr = 1.0;
  double epochs = 0.0;
};

struct RunReport {
  bool complete = false;
  std::string error;
  double initial_accuracy = 0.0;
  double final_accuracy = 0.0;
  std::optional<double> final_test_accuracy;
  double model_cr = 1.0;
  double total_eval_epochs = 0.0;
  std::vector<int> visit_order;
  std::vector<PruneSession> sessions;
  std::vector<LayerReport> layers;
  ModelTopology topology;
};

class AbortSink {
 public:
  virtual ~AbortSink() = default;
  virtual void on_abort(const RunReport& partial) = 0;
};

// Prunes every unit in order. A fresh agent is trained for each unit; its best
// mask is committed and the model fine-tuned before moving on. If the
// environment fails, the partial report is handed to on_abort and the error
// rethrown.
RunReport run_schedule(env::Environment& env, const ScheduleConfig& cfg,
                       RunObserver* observer = nullptr,
                       AbortSink* abort_sink = nullptr);

std::string to_string(Order order);
std::string to_string(Granularity granularity);
Order parse_order(const std::string& text);
Granularity parse_granularity(const std::string& text);

}  // namespace l2pf::orchestrator
