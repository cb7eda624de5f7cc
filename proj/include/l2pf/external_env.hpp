#pragma once

#include <chrono>
#include <memory>
#include <vector>

#include "l2pf/channel.hpp"
#include "l2pf/environment.hpp"
#include "l2pf/protocol.hpp"

namespace l2pf::env {

// Client for a backend speaking the line-delimited JSON protocol. Each
// session is one strictly request/reply connection; with several sessions
// (all loaded from the same checkpoint) Monte-Carlo evaluations run in
// parallel and commits are broadcast so the sessions stay in step.
class ExternalEnvironment final : public Environment {
 public:
  static constexpr std::chrono::milliseconds kDefaultTimeout{3600 * 1000};

  ExternalEnvironment(std::vector<std::unique_ptr<channel::LineChannel>> sessions,
                      std::chrono::milliseconds timeout = kDefaultTimeout);
  ~ExternalEnvironment() override;

  ModelTopology topology() override { return topology_; }
  WeightTensor state_of(int layer_index) override;
  double evaluate(std::span<const PruneMask> masks, double epochs,
                  int sample) override;
  CommitResult commit(std::span<const PruneMask> masks,
                      double final_epochs) override;
  double base_accuracy() override { return base_acc_; }
  int max_parallel_evaluations() const override {
    return static_cast<int>(sessions_.size());
  }
  std::vector<double> evaluate_batch(std::span<const EvalRequest> requests,
                                     int parallelism) override;

  // Sends shutdown to every session (idempotent).
  void shutdown();

 private:
  protocol::Json request(std::size_t session, const protocol::Json& req);
  double evaluate_on(std::size_t session, std::span<const PruneMask> masks,
                     double epochs, int sample);

  std::vector<std::unique_ptr<channel::LineChannel>> sessions_;
  std::chrono::milliseconds timeout_;
  ModelTopology topology_;
  double base_acc_ = 0.0;
  bool shut_down_ = false;
};

}  // namespace l2pf::env
