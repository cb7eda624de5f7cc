#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <unistd.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "l2pf/channel.hpp"
#include "l2pf/config.hpp"
#include "l2pf/errors.hpp"
#include "l2pf/external_env.hpp"
#include "l2pf/oracle/gradient_oracle.hpp"
#include "l2pf/orchestrator.hpp"
#include "l2pf/protocol.hpp"
#include "l2pf/report.hpp"
#include "l2pf/synthetic_env.hpp"

using nlohmann::json;
using namespace l2pf;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitEnv = 3;
constexpr int kExitInvariant = 4;

struct RunArgs {
  std::string config;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<int> parallel_eval;
  std::optional<std::string> order;
  std::optional<std::string> granularity;
  std::optional<double> bound;
  std::optional<std::string> epoch_learning;
};

json apply_overrides(json doc, const RunArgs& a) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  if (a.out) doc["out"] = *a.out;
  if (a.seed) doc["seed"] = *a.seed;
  if (a.parallel_eval) doc["parallel_eval"] = *a.parallel_eval;
  if (a.order) doc["order"] = *a.order;
  if (a.granularity) doc["granularity"] = *a.granularity;
  if (a.bound) doc["bound"] = *a.bound;
  if (a.epoch_learning) doc["epoch_learning"] = *a.epoch_learning == "on";
  return doc;
}

std::unique_ptr<env::Environment> make_environment(const config::RunConfig& cfg) {
  if (cfg.synthetic) return std::make_unique<env::SyntheticEnvironment>(*cfg.synthetic);
  const auto& e = *cfg.external;
  const int sessions = std::max(1, cfg.schedule.parallel_eval);
  std::vector<std::unique_ptr<channel::LineChannel>> channels;
  for (int s = 0; s < sessions; ++s) {
    if (!e.command.empty()) {
      channels.push_back(channel::ProcessChannel::spawn(e.command));
    } else {
      channels.push_back(channel::SocketChannel::connect(e.host, e.port));
    }
  }
  const auto timeout = std::chrono::milliseconds(
      static_cast<long long>(e.timeout_seconds * 1000.0));
  return std::make_unique<env::ExternalEnvironment>(std::move(channels), timeout);
}

int cmd_run(const RunArgs& args) {
  const auto doc = apply_overrides(config::read_json_file(args.config), args);
  const auto cfg = config::parse_run_config(doc);
  report::RunWriter writer(cfg.out_dir, report::parse_verbosity(cfg.verbosity));
  writer.write_effective_config(config::to_json(cfg));
  auto environment = make_environment(cfg);
  const auto result =
      orchestrator::run_schedule(*environment, cfg.schedule, &writer, &writer);
  writer.finish(result);
  return 0;
}

int cmd_episode_dump(const std::string& run_dir, int unit, int episode) {
  namespace fs = std::filesystem;
  const auto cfg = config::read_json_file(fs::path(run_dir) / "effective_config.json");
  std::ifstream log(fs::path(run_dir) / "episodes.jsonl");
  if (!log) throw ConfigError("no episodes.jsonl in '" + run_dir + "'");
  std::vector<json> records;
  std::string line;
  while (std::getline(log, line)) {
    if (line.empty()) continue;
    auto rec = json::parse(line);
    if (rec.at("unit").get<int>() == unit && rec.at("episode").get<int>() == episode) {
      records.push_back(std::move(rec));
    }
  }
  if (records.empty()) {
    throw ConfigError("no records for unit " + std::to_string(unit) + " episode " +
                      std::to_string(episode));
  }
  const auto dump = report::recompute_episode(records, cfg);
  report::print_dump(dump, std::cout);
  return dump.mismatches.empty() ? 0 : kExitInvariant;
}

int cmd_check_gradient(int filters, int samples, std::uint64_t seed) {
  const auto c = oracle::run_gradient_check(filters, samples, seed);
  std::printf("filters %d  samples %d  sigma %.3f  mu %.6f\n", c.filters, c.samples,
              c.sigma, c.mu);
  std::printf("%-8s %12s %14s %14s %8s\n", "coeff", "p", "expected", "mean", "z");
  for (int i = 0; i <= c.filters; ++i) {
    const bool is_mu = i == c.filters;
    const double target = is_mu ? c.expected.d_mu : c.expected.d_prob[i];
    std::printf("%-8s %12.6f %14.6e %14.6e %8.3f\n",
                is_mu ? "mu" : ("p" + std::to_string(i)).c_str(),
                is_mu ? c.mu : c.keep_probs[i], target, c.coeff_mean[i], c.coeff_z[i]);
  }
  std::printf("parameters checked %d, beyond 3 SE %d, max |z| %.3f, "
              "max error on zero-spread parameters %.3e\n",
              c.params_checked, c.params_beyond_3se, c.max_abs_z,
              c.max_deterministic_error);
  return c.params_beyond_3se == 0 ? 0 : 1;
}

env::SyntheticEnvConfig toy_resnet() {
  // Stem, then three residual blocks of two 3x3 layers each.
  env::SyntheticEnvConfig cfg;
  auto layer = [](int n, int c, std::optional<int> block, bool prunable) {
    env::SyntheticLayerConfig l;
    l.num_filters = n;
    l.in_channels = c;
    l.kernel_size = 3;
    l.block_id = block;
    l.prunable = prunable;
    for (int i = 0; i < n; ++i) l.importance.push_back(i % 2 ? 1.0 : 0.0);
    return l;
  };
  cfg.layers.push_back(layer(4, 3, std::nullopt, false));
  for (int b = 0; b < 3; ++b) {
    cfg.layers.push_back(layer(4, 4, b, true));
    cfg.layers.push_back(layer(4, 4, b, true));
  }
  cfg.seed = 7;
  return cfg;
}

int cmd_protocol_stub(const std::string& config_path, std::optional<int> port) {
  env::SyntheticEnvConfig env_cfg = toy_resnet();
  if (!config_path.empty()) {
    const auto cfg = config::load_run_config(config_path);
    if (!cfg.synthetic) throw ConfigError("protocol-stub needs a synthetic environment");
    env_cfg = *cfg.synthetic;
  }
  env::SyntheticEnvironment environment(env_cfg);
  protocol::Server server(environment);
  if (!port) {
    server.serve(std::cin, std::cout);
    return 0;
  }
  channel::TcpListener listener(*port);
  std::fprintf(stderr, "listening on 127.0.0.1:%d\n", listener.port());
  const int fd = listener.accept_one();
  server.serve_fd(fd, fd);
  ::close(fd);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned filter pruning with a REINFORCE agent"};
  app.require_subcommand(1);

  RunArgs run_args;
  auto* run = app.add_subcommand("run", "Prune every unit of the configured model");
  run->add_option("--config", run_args.config, "Run config (JSON)")->required();
  run->add_option("--out", run_args.out, "Output directory");
  run->add_option("--seed", run_args.seed, "Master seed");
  run->add_option("--parallel-eval", run_args.parallel_eval,
                  "Concurrent Monte-Carlo evaluations")
      ->check(CLI::PositiveNumber);
  run->add_option("--order", run_args.order, "Visiting order")
      ->check(CLI::IsMember({"backwards", "forwards"}));
  run->add_option("--granularity", run_args.granularity, "Unit granularity")
      ->check(CLI::IsMember({"layer", "block"}));
  run->add_option("--bound", run_args.bound, "Accuracy-drop bound b");
  run->add_option("--epoch-learning", run_args.epoch_learning,
                  "Learn the retraining epochs")
      ->check(CLI::IsMember({"on", "off"}));

  std::string dump_dir;
  int dump_unit = 0, dump_episode = 0;
  auto* dump = app.add_subcommand("episode-dump",
                                  "Recompute the rewards of one logged episode");
  dump->add_option("--run", dump_dir, "Output directory of a run")->required();
  dump->add_option("--unit", dump_unit, "Unit id")->required();
  dump->add_option("--episode", dump_episode, "Episode index")->required();

  int grad_filters = 2, grad_samples = 100000;
  std::uint64_t grad_seed = 1;
  auto* grad = app.add_subcommand("check-gradient",
                                  "Compare averaged estimates with the exact expectation");
  grad->add_option("--filters", grad_filters, "Filters in the toy layer")
      ->check(CLI::Range(1, 12));
  grad->add_option("--samples", grad_samples, "Single-sample estimates to average")
      ->check(CLI::Range(2, 100000000));
  grad->add_option("--seed", grad_seed, "Seed");

  std::string stub_config;
  std::optional<int> stub_port;
  auto* stub = app.add_subcommand("protocol-stub",
                                  "Serve a synthetic backend over the wire protocol");
  stub->add_option("--config", stub_config, "Run config with a synthetic environment");
  stub->add_option("--port", stub_port, "Listen on this TCP port (0 picks one)")
      ->check(CLI::Range(0, 65535));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) return cmd_run(run_args);
    if (*dump) return cmd_episode_dump(dump_dir, dump_unit, dump_episode);
    if (*grad) return cmd_check_gradient(grad_filters, grad_samples, grad_seed);
    if (*stub) return cmd_protocol_stub(stub_config, stub_port);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const EnvError& e) {
    std::fprintf(stderr, "environment error: %s\n", e.what());
    return kExitEnv;
  } catch (const InvariantError& e) {
    std::fprintf(stderr, "invariant violated: %s\n", e.what());
    return kExitInvariant;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "invalid argument: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
