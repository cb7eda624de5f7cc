#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "l2pf/environment.hpp"

namespace l2pf::env {

struct SyntheticLayerConfig {
  int num_filters = 1;
  int in_channels = 1;
  int kernel_size = 1;
  std::optional<int> block_id;
  bool prunable = true;
  std::vector<double> importance;  // s_i >= 0, one per filter
};

// Analytic stand-in for a CNN. Pruning filter i costs accuracy in proportion
// to its importance s_i; fine-tuning recovers that cost linearly until
// recovery_saturation epochs, except for a permanent residual fraction:
//
//   acc = acc_base - alpha * S * max(0, 1 - epochs / e_sat) - alpha_res * S
//
// with S the summed importance of the newly pruned filters.
struct SyntheticEnvConfig {
  std::vector<SyntheticLayerConfig> layers;
  double acc_base = 92.0;
  double damage_scale = 1.0;                 // alpha
  std::optional<double> residual_scale;      // alpha_res, default 0.1 * alpha
  double recovery_saturation = 4.0;          // e_sat
  std::string interaction = "additive";
  std::uint64_t seed = 0;                    // synthetic weight generation

  double residual() const { return residual_scale.value_or(0.1 * damage_scale); }
  void validate() const;
  std::vector<LayerSpec> layer_specs() const;
};

// Accuracy drop for pruning the given masks from a model whose already
// committed masks are in `committed` (filters pruned there cost nothing again).
double synthetic_damage(const SyntheticEnvConfig& cfg,
                        std::span<const PruneMask> masks, double epochs,
                        const ModelTopology* committed = nullptr);

class SyntheticEnvironment final : public Environment {
 public:
  explicit SyntheticEnvironment(SyntheticEnvConfig cfg);

  ModelTopology topology() override { return topology_; }
  WeightTensor state_of(int layer_index) override;
  double evaluate(std::span<const PruneMask> masks, double epochs,
                  int sample) override;
  CommitResult commit(std::span<const PruneMask> masks,
                      double final_epochs) override;
  double base_accuracy() override { return committed_acc_; }
  int max_parallel_evaluations() const override { return 1 << 16; }

  const SyntheticEnvConfig& config() const { return cfg_; }

 private:
  void check_masks(std::span<const PruneMask> masks) const;

  SyntheticEnvConfig cfg_;
  ModelTopology topology_;
  std::vector<WeightTensor> weights_;
  double committed_acc_;
};

}  // namespace l2pf::env
