#pragma once

#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "l2pf/orchestrator.hpp"

namespace l2pf::report {

// One episodes.jsonl record.
nlohmann::json sample_to_json(const orchestrator::Unit& unit,
                              const orchestrator::SampleLog& sample);
nlohmann::json summary_to_json(const orchestrator::RunReport& report);
void write_layers_csv(const orchestrator::RunReport& report, std::ostream& os);

enum class Verbosity { quiet, info, debug };
Verbosity parse_verbosity(const std::string& text);

// Streams the episode log while the run is going and writes summary.json,
// layers.csv and one policy checkpoint per unit into `dir`. Partial results
// are flushed if the run aborts.
class RunWriter final : public orchestrator::RunObserver,
                        public orchestrator::AbortSink {
 public:
  RunWriter(std::filesystem::path dir, Verbosity verbosity);

  void write_effective_config(const nlohmann::json& cfg);
  void on_sample(const orchestrator::Unit& unit,
                 const orchestrator::SampleLog& sample) override;
  void on_episode(const orchestrator::Unit& unit, int episode,
                  double best_r_prune, double sigma) override;
  void on_unit_done(const orchestrator::PruneSession& session) override;
  void on_policy_trained(const orchestrator::Unit& unit,
                         const policy::PolicyParams& params) override;
  void on_abort(const orchestrator::RunReport& partial) override;
  void finish(const orchestrator::RunReport& report);

  const std::filesystem::path& dir() const { return dir_; }

 private:
  void write_outputs(const orchestrator::RunReport& report);

  std::filesystem::path dir_;
  Verbosity verbosity_;
  std::ofstream episodes_;
};

// Recomputation of one logged episode from the raw record fields.
struct DumpRow {
  int sample = 0;
  std::vector<std::string> masks;
  int total_filters = 0;
  int pruned = 0;
  double a_raw = 0.0;
  double acc_pruned = 0.0;
  double acc_base = 0.0;
  double acc_term = 0.0;
  double eff_term = 0.0;
  double r_prune = 0.0;
  double r_retrain = 0.0;
  double r_prune_norm = 0.0;
  double r_retrain_norm = 0.0;
  double e_retrain = 0.0;
};

struct DumpResult {
  std::vector<DumpRow> rows;
  std::vector<std::string> mismatches;  // empty when the log is consistent
};

// `records` are the episodes.jsonl lines of one (unit, episode); `cfg` is the
// effective config of the run.
DumpResult recompute_episode(const std::vector<nlohmann::json>& records,
                             const nlohmann::json& cfg);
void print_dump(const DumpResult& dump, std::ostream& os);

}  // namespace l2pf::report
