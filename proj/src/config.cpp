#include "l2pf/config.hpp"

#include <fstream>
#include <set>

#include "l2pf/errors.hpp"
#include "l2pf/rng.hpp"

namespace l2pf::config {

using nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& known,
                    const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!known.count(it.key())) {
      throw ConfigError("unknown key '" + it.key() + "' in " + where);
    }
  }
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

env::SyntheticEnvConfig parse_synthetic(const json& e, std::uint64_t seed) {
  reject_unknown(e,
                 {"type", "acc_base", "damage_scale", "residual_scale",
                  "recovery_saturation", "interaction", "redundant_fraction",
                  "importance_range", "layers"},
                 "environment (synthetic)");
  env::SyntheticEnvConfig cfg;
  cfg.seed = seed;
  cfg.acc_base = get_or(e, "acc_base", cfg.acc_base);
  cfg.damage_scale = get_or(e, "damage_scale", cfg.damage_scale);
  if (e.contains("residual_scale") && !e.at("residual_scale").is_null()) {
    cfg.residual_scale = get_or(e, "residual_scale", 0.0);
  }
  cfg.recovery_saturation = get_or(e, "recovery_saturation", cfg.recovery_saturation);
  cfg.interaction = get_or(e, "interaction", cfg.interaction);
  const double redundant = get_or(e, "redundant_fraction", 0.5);
  const auto range = get_or(e, "importance_range", std::vector<double>{1.0, 4.0});
  if (redundant < 0.0 || redundant > 1.0) {
    throw ConfigError("redundant_fraction must lie in [0, 1]");
  }
  if (range.size() != 2 || range[0] < 0.0 || range[1] < range[0]) {
    throw ConfigError("importance_range must be [low, high] with 0 <= low <= high");
  }
  if (!e.contains("layers") || !e.at("layers").is_array() || e.at("layers").empty()) {
    throw ConfigError("synthetic environment needs a non-empty 'layers' array");
  }

  Rng rng = make_stream(seed, "synthetic-importance");
  for (const auto& l : e.at("layers")) {
    reject_unknown(l, {"N", "c", "k", "block", "prunable", "importance"},
                   "synthetic layer");
    env::SyntheticLayerConfig layer;
    layer.num_filters = get_or(l, "N", 0);
    layer.in_channels = get_or(l, "c", 0);
    layer.kernel_size = get_or(l, "k", 0);
    if (l.contains("block") && !l.at("block").is_null()) {
      layer.block_id = get_or(l, "block", 0);
    }
    layer.prunable = get_or(l, "prunable", true);
    if (l.contains("importance")) {
      layer.importance = get_or(l, "importance", std::vector<double>{});
    } else {
      // floor(N * redundant_fraction) zero-importance filters at random
      // positions, the rest uniform in importance_range.
      const int n = std::max(layer.num_filters, 0);
      std::vector<int> order(n);
      for (int i = 0; i < n; ++i) order[i] = i;
      std::shuffle(order.begin(), order.end(), rng);
      std::uniform_real_distribution<double> u(range[0], range[1]);
      layer.importance.assign(n, 0.0);
      const int zeros = static_cast<int>(std::floor(n * redundant));
      for (int r = zeros; r < n; ++r) layer.importance[order[r]] = u(rng);
    }
    cfg.layers.push_back(std::move(layer));
  }
  try {
    cfg.validate();
    ModelTopology(cfg.layer_specs());
  } catch (const std::invalid_argument& ex) {
    throw ConfigError(ex.what());
  }
  return cfg;
}

ExternalEnvConfig parse_external(const json& e) {
  reject_unknown(e, {"type", "command", "host", "port", "timeout_seconds"},
                 "environment (external)");
  ExternalEnvConfig cfg;
  cfg.command = get_or(e, "command", std::vector<std::string>{});
  cfg.host = get_or(e, "host", std::string{});
  cfg.port = get_or(e, "port", 0);
  cfg.timeout_seconds = get_or(e, "timeout_seconds", cfg.timeout_seconds);
  const bool has_cmd = !cfg.command.empty();
  const bool has_host = !cfg.host.empty();
  if (has_cmd == has_host) {
    throw ConfigError("external environment needs exactly one of 'command' or 'host'");
  }
  if (has_host && (cfg.port <= 0 || cfg.port > 65535)) {
    throw ConfigError("external environment: port must lie in 1..65535");
  }
  if (!(cfg.timeout_seconds > 0.0)) throw ConfigError("timeout_seconds must be > 0");
  return cfg;
}

}  // namespace

RunConfig parse_run_config(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  reject_unknown(doc,
                 {"order", "granularity", "episodes", "samples", "bound", "beta",
                  "log_base", "epoch_learning", "fixed_epochs",
                  "final_finetune_epochs", "early_stop_patience", "acc_base_mode",
                  "seed", "parallel_eval", "learning_rate", "momentum",
                  "clip_norm", "sigma_initial", "sigma_min", "sigma_max", "c_sigma",
                  "sigma_ema_decay", "out", "verbosity", "environment"},
                 "config");
  RunConfig cfg;
  auto& s = cfg.schedule;
  try {
    s.order = orchestrator::parse_order(get_or(doc, "order", std::string("backwards")));
    s.granularity =
        orchestrator::parse_granularity(get_or(doc, "granularity", std::string("layer")));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  s.episodes_per_unit = get_or(doc, "episodes", s.episodes_per_unit);
  s.samples = get_or(doc, "samples", s.samples);
  s.reward.bound = get_or(doc, "bound", s.reward.bound);
  s.reward.beta = get_or(doc, "beta", s.reward.beta);
  const auto log_base = get_or(doc, "log_base", std::string("natural"));
  if (log_base == "natural") {
    s.reward.log_base = reward::LogBase::natural;
  } else if (log_base == "2") {
    s.reward.log_base = reward::LogBase::two;
  } else {
    throw ConfigError("log_base must be 'natural' or '2'");
  }
  s.epoch_learning = get_or(doc, "epoch_learning", s.epoch_learning);
  s.fixed_epochs = get_or(doc, "fixed_epochs", s.fixed_epochs);
  s.early_stop_patience = get_or(doc, "early_stop_patience", s.early_stop_patience);
  const auto mode = get_or(doc, "acc_base_mode", std::string("per_unit"));
  if (mode == "per_unit") {
    s.acc_base_mode = orchestrator::AccBaseMode::per_unit;
  } else if (mode == "frozen_global") {
    s.acc_base_mode = orchestrator::AccBaseMode::frozen_global;
  } else {
    throw ConfigError("acc_base_mode must be 'per_unit' or 'frozen_global'");
  }
  s.seed = get_or<std::uint64_t>(doc, "seed", 0);
  s.parallel_eval = get_or(doc, "parallel_eval", s.parallel_eval);
  s.learning_rate = get_or(doc, "learning_rate", s.learning_rate);
  s.momentum = get_or(doc, "momentum", s.momentum);
  s.clip_norm = get_or(doc, "clip_norm", s.clip_norm);
  s.sigma_initial = get_or(doc, "sigma_initial", s.sigma_initial);
  s.sigma_min = get_or(doc, "sigma_min", s.sigma_min);
  s.sigma_max = get_or(doc, "sigma_max", s.sigma_max);
  s.c_sigma = get_or(doc, "c_sigma", s.c_sigma);
  s.sigma_ema_decay = get_or(doc, "sigma_ema_decay", s.sigma_ema_decay);
  cfg.out_dir = get_or(doc, "out", cfg.out_dir);
  cfg.verbosity = get_or(doc, "verbosity", cfg.verbosity);
  if (cfg.verbosity != "quiet" && cfg.verbosity != "info" && cfg.verbosity != "debug") {
    throw ConfigError("verbosity must be 'quiet', 'info' or 'debug'");
  }

  if (!doc.contains("environment") || !doc.at("environment").is_object()) {
    throw ConfigError("config needs an 'environment' object");
  }
  const auto& e = doc.at("environment");
  const auto type = get_or(e, "type", std::string{});
  if (type == "synthetic") {
    cfg.synthetic = parse_synthetic(e, s.seed);
  } else if (type == "external") {
    cfg.external = parse_external(e);
  } else {
    throw ConfigError("environment.type must be 'synthetic' or 'external'");
  }

  // Synthetic runs fine-tune to full recovery unless told otherwise.
  const double default_final =
      cfg.synthetic ? cfg.synthetic->recovery_saturation : 150.0;
  s.final_finetune_epochs = get_or(doc, "final_finetune_epochs", default_final);

  try {
    s.validate();
  } catch (const std::invalid_argument& ex) {
    throw ConfigError(ex.what());
  }
  return cfg;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("cannot parse '" + path.string() + "': " + e.what());
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(read_json_file(path));
}

json to_json(const RunConfig& cfg) {
  const auto& s = cfg.schedule;
  json doc{
      {"order", orchestrator::to_string(s.order)},
      {"granularity", orchestrator::to_string(s.granularity)},
      {"episodes", s.episodes_per_unit},
      {"samples", s.samples},
      {"bound", s.reward.bound},
      {"beta", s.reward.beta},
      {"log_base", s.reward.log_base == reward::LogBase::two ? "2" : "natural"},
      {"epoch_learning", s.epoch_learning},
      {"fixed_epochs", s.fixed_epochs},
      {"final_finetune_epochs", s.final_finetune_epochs},
      {"early_stop_patience", s.early_stop_patience},
      {"acc_base_mode", s.acc_base_mode == orchestrator::AccBaseMode::per_unit
                            ? "per_unit"
                            : "frozen_global"},
      {"seed", s.seed},
      {"parallel_eval", s.parallel_eval},
      {"learning_rate", s.learning_rate},
      {"momentum", s.momentum},
      {"clip_norm", s.clip_norm},
      {"sigma_initial", s.sigma_initial},
      {"sigma_min", s.sigma_min},
      {"sigma_max", s.sigma_max},
      {"c_sigma", s.c_sigma},
      {"sigma_ema_decay", s.sigma_ema_decay},
      {"out", cfg.out_dir},
      {"verbosity", cfg.verbosity},
  };
  if (cfg.synthetic) {
    const auto& e = *cfg.synthetic;
    json layers = json::array();
    for (const auto& l : e.layers) {
      layers.push_back(json{{"N", l.num_filters},
                            {"c", l.in_channels},
                            {"k", l.kernel_size},
                            {"block", l.block_id ? json(*l.block_id) : json(nullptr)},
                            {"prunable", l.prunable},
                            {"importance", l.importance}});
    }
    doc["environment"] = json{{"type", "synthetic"},
                              {"acc_base", e.acc_base},
                              {"damage_scale", e.damage_scale},
                              {"residual_scale", e.residual()},
                              {"recovery_saturation", e.recovery_saturation},
                              {"interaction", e.interaction},
                              {"layers", layers}};
  } else if (cfg.external) {
    const auto& e = *cfg.external;
    json env{{"type", "external"}, {"timeout_seconds", e.timeout_seconds}};
    if (!e.command.empty()) {
      env["command"] = e.command;
    } else {
      env["host"] = e.host;
      env["port"] = e.port;
    }
    doc["environment"] = env;
  }
  return doc;
}

}  // namespace l2pf::config
