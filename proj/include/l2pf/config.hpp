#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "l2pf/orchestrator.hpp"
#include "l2pf/synthetic_env.hpp"

namespace l2pf::config {

struct ExternalEnvConfig {
  std::vector<std::string> command;  // spawn a child process, or
  std::string host;                  // connect to host:port
  int port = 0;
  double timeout_seconds = 3600.0;
};

// Everything one `l2pf run` needs. Exactly one of synthetic / external is set.
struct RunConfig {
  orchestrator::ScheduleConfig schedule;
  std::optional<env::SyntheticEnvConfig> synthetic;
  std::optional<ExternalEnvConfig> external;
  std::string out_dir = "l2pf-out";
  std::string verbosity = "info";
};

// Parses a config document. Unknown keys and invalid values raise ConfigError.
// Synthetic layers without an explicit importance list get one generated from
// the run seed; the effective config always carries the explicit list.
RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json read_json_file(const std::filesystem::path& path);

// Effective config with all defaults applied. Parsing it yields the same run.
nlohmann::json to_json(const RunConfig& cfg);

}  // namespace l2pf::config
