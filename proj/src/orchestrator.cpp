#include "l2pf/orchestrator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

#include "l2pf/errors.hpp"
#include "l2pf/reinforce.hpp"
#include "l2pf/rng.hpp"

namespace l2pf::orchestrator {

void ScheduleConfig::validate() const {
  if (episodes_per_unit < 1) throw std::invalid_argument("episodes must be >= 1");
  if (samples < 1) throw std::invalid_argument("samples (M) must be >= 1");
  reward.validate();
  if (!(fixed_epochs >= 0.0)) throw std::invalid_argument("fixed_epochs must be >= 0");
  if (!(final_finetune_epochs >= 0.0)) {
    throw std::invalid_argument("final_finetune_epochs must be >= 0");
  }
  if (early_stop_patience < 0) throw std::invalid_argument("early_stop_patience must be >= 0");
  if (parallel_eval < 1) throw std::invalid_argument("parallel_eval must be >= 1");
  reinforce::OptimizerState::make(learning_rate, momentum);
  policy::SigmaSchedule::make(sigma_initial, sigma_min, c_sigma, sigma_ema_decay,
                              sigma_max);
}

std::vector<Unit> plan_units(const ModelTopology& topology,
                             Granularity granularity, Order order) {
  std::vector<Unit> units;
  std::map<int, std::size_t> block_unit;
  for (const auto& l : topology.layers()) {
    if (!l.prunable) continue;
    if (granularity == Granularity::block_wise && l.block_id) {
      auto it = block_unit.find(*l.block_id);
      if (it != block_unit.end()) {
        units[it->second].layers.push_back(l.layer_index);
        continue;
      }
      block_unit[*l.block_id] = units.size();
    }
    units.push_back(Unit{l.layer_index, {l.layer_index}});
  }
  if (order == Order::backwards) std::reverse(units.begin(), units.end());
  return units;
}

PruneSession run_unit(env::Environment& env, policy::PolicyParams& params,
                      const ScheduleConfig& cfg, const Unit& unit,
                      double acc_base, RunObserver* observer) {
  cfg.validate();
  if (unit.layers.empty()) throw std::invalid_argument("run_unit: empty unit");
  const ModelTopology topology = env.topology();
  std::vector<WeightTensor> states;
  int total_filters = 0;
  for (int l : unit.layers) {
    if (!topology.layer(l).prunable) {
      throw std::invalid_argument("run_unit: layer " + std::to_string(l) +
                                  " is not prunable");
    }
    states.push_back(env.state_of(l));
    total_filters += states.back().num_filters();
  }

  PruneSession session;
  session.unit = unit;
  session.acc_base_current = acc_base;

  Rng rng = make_stream(cfg.seed, "sampling/unit-" + std::to_string(unit.unit_id));
  auto sigma = policy::SigmaSchedule::make(cfg.sigma_initial, cfg.sigma_min,
                                           cfg.c_sigma, cfg.sigma_ema_decay,
                                           cfg.sigma_max);
  auto opt = reinforce::OptimizerState::make(cfg.learning_rate, cfg.momentum);

  double best_r_prune = -std::numeric_limits<double>::infinity();
  int since_improvement = 0;
  std::vector<env::EvalRequest> requests;
  for (int episode = 0; episode < cfg.episodes_per_unit; ++episode) {
    const auto out = policy::policy_forward(params, states);
    auto actions = policy::sample_actions(out, sigma.sigma, cfg.samples, rng, unit.layers);

    requests.clear();
    for (const auto& a : actions) {
      const double epochs =
          cfg.epoch_learning
              ? reward::epochs_from_action(a.epoch_action_raw, cfg.reward.beta)
              : cfg.fixed_epochs;
      requests.push_back(env::EvalRequest{a.prune_masks, epochs, a.sample_index});
    }
    const auto accs = env.evaluate_batch(requests, cfg.parallel_eval);

    std::vector<reward::RewardRecord> raw;
    for (std::size_t j = 0; j < actions.size(); ++j) {
      raw.push_back(reward::make_record(actions[j].sample_index, cfg.reward,
                                        total_filters, actions[j].total_pruned(),
                                        actions[j].epoch_action_raw, acc_base,
                                        accs[j]));
      session.total_eval_epochs_spent += requests[j].epochs;
    }
    auto normalized = reward::normalize_rewards(raw);

    reinforce::EpisodeBatch batch{&out, sigma.sigma, actions, normalized};
    auto grad = reinforce::estimate_gradient(batch, params);
    reinforce::clip_by_global_norm(grad, cfg.clip_norm);
    reinforce::apply_update(params, grad, opt);

    std::vector<double> retrain;
    for (const auto& r : raw) retrain.push_back(r.r_retrain_raw);
    sigma = policy::update_sigma(sigma, retrain);

    bool improved = false;
    for (std::size_t j = 0; j < actions.size(); ++j) {
      SampleLog log{episode, std::move(actions[j]), requests[j].epochs, acc_base,
                    normalized[j]};
      if (log.reward.r_prune_raw > best_r_prune) {
        best_r_prune = log.reward.r_prune_raw;
        improved = true;
      }
      if (observer) observer->on_sample(unit, log);
      session.samples.push_back(std::move(log));
    }
    session.episodes_run = episode + 1;
    if (observer) observer->on_episode(unit, episode, best_r_prune, sigma.sigma);

    since_improvement = improved ? 0 : since_improvement + 1;
    if (cfg.early_stop_patience > 0 && since_improvement >= cfg.early_stop_patience) {
      break;
    }
  }

  const auto final_out = policy::policy_forward(params, states);
  session.final_keep_probs = final_out.keep_probs;
  session.final_mu = final_out.epoch_mu;
  session.final_sigma = sigma.sigma;
  session.best_masks = select_best_mask(session);
  return session;
}

std::vector<PruneMask> select_best_mask(const PruneSession& session) {
  if (session.samples.empty()) {
    throw std::invalid_argument("select_best_mask: session has no samples");
  }
  const SampleLog* best = nullptr;
  std::string best_bits;
  for (const auto& s : session.samples) {
    const auto& masks = s.action.prune_masks;
    if (std::any_of(masks.begin(), masks.end(),
                    [](const PruneMask& m) { return m.kept_count() == 0; })) {
      continue;
    }
    std::string bits;
    for (const auto& m : masks) bits += m.bitstring();
    bool better = false;
    if (!best) {
      better = true;
    } else if (s.reward.r_prune_raw != best->reward.r_prune_raw) {
      better = s.reward.r_prune_raw > best->reward.r_prune_raw;
    } else if (s.action.total_pruned() != best->action.total_pruned()) {
      better = s.action.total_pruned() > best->action.total_pruned();
    } else {
      better = bits < best_bits;
    }
    if (better) {
      best = &s;
      best_bits = std::move(bits);
    }
  }
  if (best) return best->action.prune_masks;

  std::vector<PruneMask> keep;
  for (const auto& m : session.samples.front().action.prune_masks) {
    keep.push_back(PruneMask::keep_all(m.layer_index(), m.size()));
  }
  return keep;
}

namespace {

void finish_report(RunReport& report) {
  report.model_cr = model_cr(report.topology);
  report.total_eval_epochs = 0.0;
  std::map<int, double> epochs_by_layer;
  for (const auto& s : report.sessions) {
    report.total_eval_epochs += s.total_eval_epochs_spent;
    for (int l : s.unit.layers) {
      epochs_by_layer[l] += s.total_eval_epochs_spent / s.unit.layers.size();
    }
  }
  report.layers.clear();
  for (const auto& l : report.topology.layers()) {
    LayerReport lr;
    lr.layer = l.layer_index;
    const PruneMask* m = report.topology.committed_mask(l.layer_index);
    lr.kept = m ? m->kept_count() : l.num_filters;
    lr.pruned = l.num_filters - lr.kept;
    lr.layer_cr = layer_cr(report.topology, l.layer_index);
    lr.epochs = epochs_by_layer[l.layer_index];
    report.layers.push_back(lr);
  }
}

}  // namespace

RunReport run_schedule(env::Environment& env, const ScheduleConfig& cfg,
                       RunObserver* observer, AbortSink* abort_sink) {
  cfg.validate();
  RunReport report;
  report.topology = env.topology();
  report.initial_accuracy = env.base_accuracy();
  report.final_accuracy = report.initial_accuracy;
  const auto units = plan_units(report.topology, cfg.granularity, cfg.order);
  if (units.empty()) throw std::invalid_argument("run_schedule: no prunable layers");
  for (const auto& u : units) {
    if (cfg.granularity == Granularity::block_wise &&
        report.topology.layer(u.layers.front()).block_id && u.layers.size() != 2) {
      throw std::invalid_argument("run_schedule: block unit " +
                                  std::to_string(u.unit_id) +
                                  " does not have two layers");
    }
  }

  try {
    for (const auto& unit : units) {
      report.visit_order.push_back(unit.unit_id);
      const double acc_base = cfg.acc_base_mode == AccBaseMode::per_unit
                                  ? env.base_accuracy()
                                  : report.initial_accuracy;
      Rng init = make_stream(cfg.seed, "policy-init/unit-" + std::to_string(unit.unit_id));
      auto params = policy::PolicyParams::initialize(init);
      auto session = run_unit(env, params, cfg, unit, acc_base, observer);
      if (observer) observer->on_policy_trained(unit, params);

      for (const auto& m : session.best_masks) {
        if (m.kept_count() == 0) {
          throw InvariantError("selected mask prunes every filter of layer " +
                               std::to_string(m.layer_index()));
        }
      }
      const auto result = env.commit(session.best_masks, cfg.final_finetune_epochs);
      session.committed = true;
      session.committed_acc = result.acc;
      session.committed_test_acc = result.test_acc;
      for (const auto& m : session.best_masks) report.topology.commit(m);
      report.final_accuracy = result.acc;
      report.final_test_accuracy = result.test_acc;
      if (observer) observer->on_unit_done(session);
      report.sessions.push_back(std::move(session));
    }
  } catch (const std::exception& e) {
    report.complete = false;
    report.error = e.what();
    try {
      finish_report(report);
    } catch (const std::exception&) {
    }
    if (abort_sink) abort_sink->on_abort(report);
    throw;
  }
  report.complete = true;
  finish_report(report);
  return report;
}

std::string to_string(Order order) {
  return order == Order::forwards ? "forwards" : "backwards";
}

std::string to_string(Granularity g) {
  return g == Granularity::layer_wise ? "layer" : "block";
}

Order parse_order(const std::string& text) {
  if (text == "forwards") return Order::forwards;
  if (text == "backwards") return Order::backwards;
  throw std::invalid_argument("order must be 'forwards' or 'backwards', got '" + text + "'");
}

Granularity parse_granularity(const std::string& text) {
  if (text == "layer" || text == "layer_wise") return Granularity::layer_wise;
  if (text == "block" || text == "block_wise") return Granularity::block_wise;
  throw std::invalid_argument("granularity must be 'layer' or 'block', got '" + text + "'");
}

}  // namespace l2pf::orchestrator
