#include "l2pf/report.hpp"

#include <cmath>
#include <cstdio>
#include <iomanip>
#include <iostream>

#include "l2pf/config.hpp"
#include "l2pf/errors.hpp"
#include "l2pf/reward.hpp"

namespace l2pf::report {

using nlohmann::json;
namespace fs = std::filesystem;

json sample_to_json(const orchestrator::Unit& unit,
                    const orchestrator::SampleLog& s) {
  json masks = json::array();
  for (const auto& m : s.action.prune_masks) masks.push_back(m.to_string());
  return json{{"unit", unit.unit_id},
              {"episode", s.episode},
              {"sample", s.action.sample_index},
              {"masks", masks},
              {"a_raw", s.action.epoch_action_raw},
              {"e_retrain", s.e_retrain},
              {"acc_base", s.acc_base},
              {"acc_pruned", s.reward.acc_pruned},
              {"r_prune_raw", s.reward.r_prune_raw},
              {"r_retrain_raw", s.reward.r_retrain_raw},
              {"r_prune_norm", s.reward.r_prune_norm},
              {"r_retrain_norm", s.reward.r_retrain_norm}};
}

json summary_to_json(const orchestrator::RunReport& r) {
  json units = json::array();
  for (const auto& s : r.sessions) {
    json masks = json::array();
    for (const auto& m : s.best_masks) masks.push_back(m.to_string());
    units.push_back(json{{"unit", s.unit.unit_id},
                         {"layers", s.unit.layers},
                         {"episodes", s.episodes_run},
                         {"eval_epochs", s.total_eval_epochs_spent},
                         {"acc_base", s.acc_base_current},
                         {"committed_masks", masks},
                         {"committed_acc", s.committed_acc},
                         {"final_keep_probs", s.final_keep_probs},
                         {"final_mu", s.final_mu},
                         {"final_sigma", s.final_sigma}});
  }
  json out{{"complete", r.complete},
           {"initial_accuracy", r.initial_accuracy},
           {"final_accuracy", r.final_accuracy},
           {"model_cr", r.model_cr},
           {"total_eval_epochs", r.total_eval_epochs},
           {"visit_order", r.visit_order},
           {"units", units}};
  if (r.final_test_accuracy) out["final_test_accuracy"] = *r.final_test_accuracy;
  if (!r.error.empty()) out["error"] = r.error;
  return out;
}

void write_layers_csv(const orchestrator::RunReport& r, std::ostream& os) {
  os << "layer,kept,pruned,layer_cr,epochs\n";
  for (const auto& l : r.layers) {
    os << l.layer << ',' << l.kept << ',' << l.pruned << ','
       << std::setprecision(10) << l.layer_cr << ',' << l.epochs << '\n';
  }
}

Verbosity parse_verbosity(const std::string& text) {
  if (text == "quiet") return Verbosity::quiet;
  if (text == "info") return Verbosity::info;
  if (text == "debug") return Verbosity::debug;
  throw ConfigError("unknown verbosity '" + text + "'");
}

RunWriter::RunWriter(fs::path dir, Verbosity verbosity)
    : dir_(std::move(dir)), verbosity_(verbosity) {
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec) throw ConfigError("cannot create output directory '" + dir_.string() + "'");
  episodes_.open(dir_ / "episodes.jsonl");
  if (!episodes_) throw ConfigError("cannot write to '" + dir_.string() + "'");
}

void RunWriter::write_effective_config(const json& cfg) {
  std::ofstream(dir_ / "effective_config.json") << cfg.dump(2) << '\n';
}

void RunWriter::on_sample(const orchestrator::Unit& unit,
                          const orchestrator::SampleLog& sample) {
  episodes_ << sample_to_json(unit, sample).dump() << '\n';
}

void RunWriter::on_episode(const orchestrator::Unit& unit, int episode,
                           double best_r_prune, double sigma) {
  episodes_.flush();
  if (verbosity_ == Verbosity::debug) {
    std::fprintf(stderr, "unit %d episode %d best R_prune %.5f sigma %.4f\n",
                 unit.unit_id, episode, best_r_prune, sigma);
  }
}

void RunWriter::on_unit_done(const orchestrator::PruneSession& s) {
  if (verbosity_ == Verbosity::quiet) return;
  int kept = 0, total = 0;
  for (const auto& m : s.best_masks) {
    kept += m.kept_count();
    total += m.size();
  }
  std::fprintf(stderr, "unit %d: kept %d/%d filters after %d episodes, acc %.4f\n",
               s.unit.unit_id, kept, total, s.episodes_run, s.committed_acc);
}

void RunWriter::on_policy_trained(const orchestrator::Unit& unit,
                                  const policy::PolicyParams& params) {
  std::ofstream os(dir_ / ("policy-unit-" + std::to_string(unit.unit_id) + ".txt"));
  policy::save_checkpoint(params, os);
}

void RunWriter::write_outputs(const orchestrator::RunReport& report) {
  episodes_.flush();
  std::ofstream(dir_ / "summary.json") << summary_to_json(report).dump(2) << '\n';
  std::ofstream csv(dir_ / "layers.csv");
  write_layers_csv(report, csv);
}

void RunWriter::on_abort(const orchestrator::RunReport& partial) {
  write_outputs(partial);
}

void RunWriter::finish(const orchestrator::RunReport& report) {
  write_outputs(report);
  if (verbosity_ != Verbosity::quiet) {
    std::fprintf(stderr, "accuracy %.4f -> %.4f, model CR %.4f, eval epochs %.1f\n",
                 report.initial_accuracy, report.final_accuracy, report.model_cr,
                 report.total_eval_epochs);
  }
}

namespace {

bool close(double a, double b) {
  return std::abs(a - b) <= 1e-9 * std::max(1.0, std::max(std::abs(a), std::abs(b)));
}

}  // namespace

DumpResult recompute_episode(const std::vector<json>& records, const json& cfg_doc) {
  const auto cfg = config::parse_run_config(cfg_doc);
  const auto& sched = cfg.schedule;
  DumpResult out;
  std::vector<reward::RewardRecord> rewards;
  for (const auto& rec : records) {
    DumpRow row;
    row.sample = rec.at("sample").get<int>();
    row.a_raw = rec.at("a_raw").get<double>();
    row.acc_pruned = rec.at("acc_pruned").get<double>();
    row.acc_base = rec.at("acc_base").get<double>();
    for (const auto& m : rec.at("masks")) {
      const auto mask = PruneMask::parse(m.get<std::string>());
      row.masks.push_back(mask.to_string());
      row.total_filters += mask.size();
      row.pruned += mask.pruned_count();
    }
    row.acc_term = reward::acc_term(sched.reward.bound, row.acc_base, row.acc_pruned);
    row.eff_term = reward::eff_term(row.total_filters, row.pruned, sched.reward.log_base);
    row.r_prune = reward::prune_reward(row.acc_term, row.eff_term);
    row.r_retrain = reward::retrain_reward(row.a_raw, row.acc_base, row.acc_pruned);
    row.e_retrain = sched.epoch_learning
                        ? reward::epochs_from_action(row.a_raw, sched.reward.beta)
                        : sched.fixed_epochs;

    const std::string tag = "sample " + std::to_string(row.sample) + ": ";
    if (!close(row.r_prune, rec.at("r_prune_raw").get<double>())) {
      out.mismatches.push_back(tag + "r_prune_raw");
    }
    if (!close(row.r_retrain, rec.at("r_retrain_raw").get<double>())) {
      out.mismatches.push_back(tag + "r_retrain_raw");
    }
    if (!close(row.e_retrain, rec.at("e_retrain").get<double>())) {
      out.mismatches.push_back(tag + "e_retrain");
    }
    reward::RewardRecord rr;
    rr.sample_index = row.sample;
    rr.r_prune_raw = row.r_prune;
    rr.r_retrain_raw = row.r_retrain;
    rewards.push_back(rr);
    out.rows.push_back(std::move(row));
  }
  rewards = reward::normalize_rewards(rewards);
  for (std::size_t j = 0; j < rewards.size(); ++j) {
    auto& row = out.rows[j];
    row.r_prune_norm = rewards[j].r_prune_norm;
    row.r_retrain_norm = rewards[j].r_retrain_norm;
    const std::string tag = "sample " + std::to_string(row.sample) + ": ";
    if (!close(row.r_prune_norm, records[j].at("r_prune_norm").get<double>())) {
      out.mismatches.push_back(tag + "r_prune_norm");
    }
    if (!close(row.r_retrain_norm, records[j].at("r_retrain_norm").get<double>())) {
      out.mismatches.push_back(tag + "r_retrain_norm");
    }
  }
  return out;
}

void print_dump(const DumpResult& dump, std::ostream& os) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%-6s %5s %5s %9s %9s %9s %9s %9s %10s %10s %9s %9s %8s\n",
                "sample", "N", "n", "acc_base", "acc", "acc_term", "eff_term",
                "a_raw", "R_prune", "R_retrain", "Rp_norm", "Rr_norm", "e");
  os << buf;
  for (const auto& r : dump.rows) {
    std::snprintf(buf, sizeof buf,
                  "%-6d %5d %5d %9.4f %9.4f %9.5f %9.5f %9.5f %10.6f %10.6f %9.5f %9.5f %8.4f\n",
                  r.sample, r.total_filters, r.pruned, r.acc_base, r.acc_pruned,
                  r.acc_term, r.eff_term, r.a_raw, r.r_prune, r.r_retrain,
                  r.r_prune_norm, r.r_retrain_norm, r.e_retrain);
    os << buf;
    for (const auto& m : r.masks) os << "       " << m << '\n';
  }
  if (dump.mismatches.empty()) {
    os << "log consistent\n";
  } else {
    for (const auto& m : dump.mismatches) os << "MISMATCH " << m << '\n';
  }
}

}  // namespace l2pf::report
