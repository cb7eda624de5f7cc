#include <gtest/gtest.h>

#include <set>

#include "l2pf/errors.hpp"
#include "l2pf/orchestrator.hpp"
#include "l2pf/synthetic_env.hpp"

using namespace l2pf;
using namespace l2pf::orchestrator;

namespace {

env::SyntheticLayerConfig layer(int n, int c, std::optional<int> block = std::nullopt,
                                bool prunable = true) {
  env::SyntheticLayerConfig l;
  l.num_filters = n;
  l.in_channels = c;
  l.kernel_size = 3;
  l.block_id = block;
  l.prunable = prunable;
  for (int i = 0; i < n; ++i) l.importance.push_back(i % 2 ? 2.0 : 0.0);
  return l;
}

// Stem plus three prunable layers.
env::SyntheticEnvConfig chain() {
  env::SyntheticEnvConfig cfg;
  cfg.layers = {layer(4, 3, std::nullopt, false), layer(6, 4), layer(6, 6), layer(4, 6)};
  cfg.damage_scale = 2.0;
  cfg.seed = 5;
  return cfg;
}

// Stem plus two residual blocks.
env::SyntheticEnvConfig resnet() {
  env::SyntheticEnvConfig cfg;
  cfg.layers = {layer(4, 3, std::nullopt, false), layer(4, 4, 0), layer(4, 4, 0),
                layer(4, 4, 1), layer(4, 4, 1)};
  cfg.seed = 6;
  return cfg;
}

ScheduleConfig small_schedule() {
  ScheduleConfig s;
  s.episodes_per_unit = 20;
  s.samples = 3;
  s.final_finetune_epochs = 4.0;
  s.seed = 17;
  return s;
}

// Synthetic environment that records what the orchestrator asks of it.
class RecordingEnv : public env::Environment {
 public:
  explicit RecordingEnv(env::SyntheticEnvConfig cfg, int fail_after = -1)
      : inner_(std::move(cfg)), fail_after_(fail_after) {}
  ModelTopology topology() override { return inner_.topology(); }
  WeightTensor state_of(int l) override { return inner_.state_of(l); }
  double evaluate(std::span<const PruneMask> masks, double epochs, int sample) override {
    if (fail_after_ >= 0 && static_cast<int>(epochs_seen.size()) >= fail_after_) {
      throw EnvError("backend went away");
    }
    epochs_seen.push_back(epochs);
    std::set<int> layers;
    for (const auto& m : masks) layers.insert(m.layer_index());
    evaluated_units.push_back(layers);
    return inner_.evaluate(masks, epochs, sample);
  }
  env::CommitResult commit(std::span<const PruneMask> masks, double e) override {
    commits.emplace_back(masks.begin(), masks.end());
    base_seen.push_back(inner_.base_accuracy());
    return inner_.commit(masks, e);
  }
  double base_accuracy() override { return inner_.base_accuracy(); }

  std::vector<double> epochs_seen;
  std::vector<std::set<int>> evaluated_units;
  std::vector<std::vector<PruneMask>> commits;
  std::vector<double> base_seen;

 private:
  env::SyntheticEnvironment inner_;
  int fail_after_;
};

SampleLog sample(double r_prune, const std::string& bits, int index = 0) {
  SampleLog s;
  s.action.prune_masks = {PruneMask::from_bitstring(1, bits)};
  s.action.sample_index = index;
  s.reward.r_prune_raw = r_prune;
  return s;
}

}  // namespace

TEST(PlanUnits, OrdersAndGranularity) {
  const ModelTopology chain_t(chain().layer_specs());
  const auto back = plan_units(chain_t, Granularity::layer_wise, Order::backwards);
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back[0].layers, std::vector<int>{3});
  EXPECT_EQ(back[1].layers, std::vector<int>{2});
  EXPECT_EQ(back[2].layers, std::vector<int>{1});
  const auto fwd = plan_units(chain_t, Granularity::layer_wise, Order::forwards);
  EXPECT_EQ(fwd[0].layers, std::vector<int>{1});
  EXPECT_EQ(fwd[2].layers, std::vector<int>{3});

  const ModelTopology res_t(resnet().layer_specs());
  const auto blocks = plan_units(res_t, Granularity::block_wise, Order::backwards);
  ASSERT_EQ(blocks.size(), 2u);
  EXPECT_EQ(blocks[0].layers, (std::vector<int>{3, 4}));
  EXPECT_EQ(blocks[1].layers, (std::vector<int>{1, 2}));
  EXPECT_EQ(plan_units(res_t, Granularity::layer_wise, Order::forwards).size(), 4u);
}

TEST(PlanUnits, OrderOnThreePrunableLayers) {
  // Topology indices 0..2, all prunable.
  env::SyntheticEnvConfig cfg;
  cfg.layers = {layer(4, 3), layer(4, 4), layer(4, 4)};
  const auto units =
      plan_units(ModelTopology(cfg.layer_specs()), Granularity::layer_wise, Order::backwards);
  std::vector<int> order;
  for (const auto& u : units) order.push_back(u.layers[0]);
  EXPECT_EQ(order, (std::vector<int>{2, 1, 0}));
}

TEST(RunUnit, OneEpisodeOneSample) {
  RecordingEnv env(chain());
  auto s = small_schedule();
  s.episodes_per_unit = 1;
  s.samples = 1;
  Rng rng = make_stream(1, "t");
  auto params = policy::PolicyParams::initialize(rng);
  const auto session = run_unit(env, params, s, Unit{2, {2}}, env.base_accuracy());
  EXPECT_EQ(env.epochs_seen.size(), 1u);
  ASSERT_EQ(session.samples.size(), 1u);
  EXPECT_EQ(session.episodes_run, 1);
  EXPECT_EQ(session.best_masks.size(), 1u);
}

TEST(RunUnit, FixedEpochsWhenLearningOff) {
  RecordingEnv env(chain());
  auto s = small_schedule();
  s.epoch_learning = false;
  Rng rng = make_stream(1, "t");
  auto params = policy::PolicyParams::initialize(rng);
  const auto session = run_unit(env, params, s, Unit{1, {1}}, env.base_accuracy());
  ASSERT_EQ(env.epochs_seen.size(), 60u);
  for (double e : env.epochs_seen) EXPECT_EQ(e, 8.0);
  EXPECT_DOUBLE_EQ(session.total_eval_epochs_spent, 480.0);
}

TEST(RunUnit, EpochAccountingAndClamp) {
  RecordingEnv env(chain());
  auto s = small_schedule();
  Rng rng = make_stream(1, "t");
  auto params = policy::PolicyParams::initialize(rng);
  const auto session = run_unit(env, params, s, Unit{1, {1}}, env.base_accuracy());
  double sum = 0.0;
  for (std::size_t j = 0; j < session.samples.size(); ++j) {
    const auto& log = session.samples[j];
    EXPECT_EQ(log.e_retrain, env.epochs_seen[j]);
    EXPECT_DOUBLE_EQ(log.e_retrain,
                     8.0 * std::clamp(log.action.epoch_action_raw, 0.0, 1.0));
    sum += log.e_retrain;
  }
  EXPECT_DOUBLE_EQ(session.total_eval_epochs_spent, sum);
}

TEST(RunUnit, EarlyStopping) {
  RecordingEnv env(chain());
  auto s = small_schedule();
  s.episodes_per_unit = 500;
  s.early_stop_patience = 5;
  Rng rng = make_stream(1, "t");
  auto params = policy::PolicyParams::initialize(rng);
  const auto session = run_unit(env, params, s, Unit{1, {1}}, env.base_accuracy());
  EXPECT_LT(session.episodes_run, 500);
  EXPECT_EQ(session.samples.size(), static_cast<std::size_t>(session.episodes_run * 3));
}

TEST(RunUnit, RejectsNonPrunableLayer) {
  RecordingEnv env(chain());
  Rng rng = make_stream(1, "t");
  auto params = policy::PolicyParams::initialize(rng);
  EXPECT_THROW(run_unit(env, params, small_schedule(), Unit{0, {0}}, 92.0),
               std::invalid_argument);
}

TEST(SelectBest, SingleSample) {
  PruneSession s;
  s.samples = {sample(0.1, "1010")};
  EXPECT_EQ(select_best_mask(s)[0].bitstring(), "1010");
}

TEST(SelectBest, TieBreaks) {
  PruneSession s;
  s.samples = {sample(0.5, "11000111"), sample(0.5, "11000001"), sample(0.2, "00000001")};
  EXPECT_EQ(select_best_mask(s)[0].bitstring(), "11000001");
  PruneSession t;
  t.samples = {sample(0.5, "1100"), sample(0.5, "0101"), sample(0.5, "1010")};
  EXPECT_EQ(select_best_mask(t)[0].bitstring(), "0101");
}

TEST(SelectBest, NeverAllPrune) {
  PruneSession s;
  s.samples = {sample(5.0, "0000"), sample(0.1, "0100")};
  EXPECT_EQ(select_best_mask(s)[0].bitstring(), "0100");
  PruneSession only;
  only.samples = {sample(5.0, "000")};
  EXPECT_EQ(select_best_mask(only)[0].bitstring(), "111");
  EXPECT_THROW(select_best_mask(PruneSession{}), std::invalid_argument);
}

TEST(RunSchedule, BackwardsVisitsDeepestFirstAndSkipsStem) {
  RecordingEnv env(chain());
  const auto report = run_schedule(env, small_schedule());
  EXPECT_TRUE(report.complete);
  EXPECT_EQ(report.visit_order, (std::vector<int>{3, 2, 1}));
  ASSERT_EQ(env.commits.size(), 3u);
  EXPECT_EQ(env.commits[0][0].layer_index(), 3);
  EXPECT_EQ(env.commits[2][0].layer_index(), 1);
  for (const auto& u : env.evaluated_units) EXPECT_EQ(u.count(0), 0u);
  EXPECT_EQ(report.topology.committed_mask(0), nullptr);
}

TEST(RunSchedule, BlockWisePrunesBothLayersTogether) {
  RecordingEnv env(resnet());
  auto s = small_schedule();
  s.granularity = Granularity::block_wise;
  const auto report = run_schedule(env, s);
  ASSERT_EQ(report.sessions.size(), 2u);
  for (const auto& u : env.evaluated_units) {
    EXPECT_TRUE(u == std::set<int>({3, 4}) || u == std::set<int>({1, 2}));
  }
  ASSERT_EQ(env.commits.size(), 2u);
  EXPECT_EQ(env.commits[0].size(), 2u);
  EXPECT_EQ(report.sessions[0].unit.layers, (std::vector<int>{3, 4}));
}

TEST(RunSchedule, AccBaseFollowsCommits) {
  RecordingEnv env(chain());
  auto s = small_schedule();
  const auto report = run_schedule(env, s);
  for (std::size_t u = 0; u < report.sessions.size(); ++u) {
    EXPECT_EQ(report.sessions[u].acc_base_current, env.base_seen[u]);
    if (u > 0) EXPECT_EQ(report.sessions[u].acc_base_current, report.sessions[u - 1].committed_acc);
  }
  RecordingEnv frozen_env(chain());
  s.acc_base_mode = AccBaseMode::frozen_global;
  const auto frozen = run_schedule(frozen_env, s);
  for (const auto& session : frozen.sessions) EXPECT_EQ(session.acc_base_current, 92.0);
}

TEST(RunSchedule, EpochIdentityAndReportShape) {
  RecordingEnv env(chain());
  const auto report = run_schedule(env, small_schedule());
  double total = 0.0;
  for (const auto& s : report.sessions) total += s.total_eval_epochs_spent;
  EXPECT_DOUBLE_EQ(report.total_eval_epochs, total);
  double seen = 0.0;
  for (double e : env.epochs_seen) seen += e;
  EXPECT_NEAR(report.total_eval_epochs, seen, 1e-9);
  ASSERT_EQ(report.layers.size(), 4u);
  for (const auto& l : report.layers) {
    EXPECT_GE(l.kept, 1);
    EXPECT_EQ(l.kept + l.pruned, chain().layers[l.layer].num_filters);
  }
  EXPECT_EQ(report.model_cr, model_cr(report.topology));
  EXPECT_EQ(report.final_accuracy, env.base_accuracy());
}

TEST(RunSchedule, Deterministic) {
  RecordingEnv a(chain()), b(chain());
  auto s = small_schedule();
  s.parallel_eval = 3;
  const auto ra = run_schedule(a, s);
  s.parallel_eval = 1;
  const auto rb = run_schedule(b, s);
  ASSERT_EQ(ra.sessions.size(), rb.sessions.size());
  for (std::size_t u = 0; u < ra.sessions.size(); ++u) {
    EXPECT_EQ(ra.sessions[u].best_masks, rb.sessions[u].best_masks);
    EXPECT_EQ(ra.sessions[u].final_keep_probs, rb.sessions[u].final_keep_probs);
    EXPECT_EQ(ra.sessions[u].final_mu, rb.sessions[u].final_mu);
  }
  EXPECT_EQ(ra.final_accuracy, rb.final_accuracy);
  EXPECT_EQ(ra.total_eval_epochs, rb.total_eval_epochs);
  EXPECT_EQ(a.epochs_seen, b.epochs_seen);
}

TEST(RunSchedule, AbortFlushesPartialReport) {
  struct Sink : AbortSink {
    void on_abort(const RunReport& r) override {
      called = true;
      report = r;
    }
    bool called = false;
    RunReport report;
  } sink;
  RecordingEnv env(chain(), 70);
  EXPECT_THROW(run_schedule(env, small_schedule(), nullptr, &sink), EnvError);
  ASSERT_TRUE(sink.called);
  EXPECT_FALSE(sink.report.complete);
  EXPECT_NE(sink.report.error.find("backend went away"), std::string::npos);
  EXPECT_EQ(sink.report.sessions.size(), 1u);
  EXPECT_EQ(sink.report.visit_order, (std::vector<int>{3, 2}));
}

TEST(ScheduleConfig, Validation) {
  auto s = small_schedule();
  s.episodes_per_unit = 0;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = small_schedule();
  s.samples = 0;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  EXPECT_EQ(parse_order("forwards"), Order::forwards);
  EXPECT_EQ(parse_granularity("block"), Granularity::block_wise);
  EXPECT_THROW(parse_order("sideways"), std::invalid_argument);
}
