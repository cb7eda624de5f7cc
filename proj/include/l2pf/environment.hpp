#pragma once

#include <optional>
#include <span>
#include <vector>

#include "l2pf/core.hpp"

namespace l2pf::env {

struct EvalRequest {
  std::vector<PruneMask> masks;  // one layer, or both layers of a block
  double epochs = 0.0;
  int sample = 0;
};

struct CommitResult {
  double acc = 0.0;                 // evaluation split, percentage points
  std::optional<double> test_acc;   // held-out split, when the backend has one
};

// The model being pruned. Accuracies are percentage points.
//
// evaluate() never changes the committed model: every Monte-Carlo sample of
// an episode starts from the same checkpoint. commit() permanently zeroes the
// pruned filters (and the matching input kernels of the next prunable layer)
// and then fine-tunes for final_epochs.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual ModelTopology topology() = 0;
  virtual WeightTensor state_of(int layer_index) = 0;
  virtual double evaluate(std::span<const PruneMask> masks, double epochs,
                          int sample) = 0;
  virtual CommitResult commit(std::span<const PruneMask> masks,
                              double final_epochs) = 0;
  // Accuracy of the committed model as it stands now.
  virtual double base_accuracy() = 0;

  // How many evaluate() calls may run at once.
  virtual int max_parallel_evaluations() const { return 1; }

  // Evaluates requests, running up to `parallelism` at once (capped by
  // max_parallel_evaluations). Results are in request order.
  virtual std::vector<double> evaluate_batch(
      std::span<const EvalRequest> requests, int parallelism);
};

}  // namespace l2pf::env
