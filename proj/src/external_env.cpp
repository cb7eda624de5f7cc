#include "l2pf/external_env.hpp"

#include <cmath>
#include <future>

#include "l2pf/errors.hpp"

namespace l2pf::env {

using protocol::Json;

namespace {

double finite_number(const Json& reply, const char* key, const std::string& line) {
  if (!reply.contains(key) || !reply.at(key).is_number()) {
    throw ProtocolError(std::string("reply lacks numeric '") + key + "'", line);
  }
  const double v = reply.at(key).get<double>();
  if (!std::isfinite(v)) throw ProtocolError(std::string("non-finite '") + key + "'", line);
  return v;
}

}  // namespace

ExternalEnvironment::ExternalEnvironment(
    std::vector<std::unique_ptr<channel::LineChannel>> sessions,
    std::chrono::milliseconds timeout)
    : sessions_(std::move(sessions)), timeout_(timeout) {
  if (sessions_.empty()) throw EnvError("external environment: no sessions");
  for (std::size_t s = 0; s < sessions_.size(); ++s) {
    const Json reply = request(s, protocol::hello_request());
    const std::string line = reply.dump();
    if (!reply.contains("layers") || !reply.at("layers").is_array()) {
      throw ProtocolError("hello reply lacks 'layers'", line);
    }
    std::vector<LayerSpec> layers;
    try {
      for (const auto& l : reply.at("layers")) layers.push_back(protocol::layer_from_json(l));
    } catch (const Json::exception& e) {
      throw ProtocolError(std::string("bad layer entry (") + e.what() + ")", line);
    }
    const double acc = finite_number(reply, "acc_base", line);
    if (s == 0) {
      try {
        topology_ = ModelTopology(std::move(layers));
      } catch (const std::invalid_argument& e) {
        throw ProtocolError(std::string("invalid layer table: ") + e.what(), line);
      }
      base_acc_ = acc;
    } else if (layers != topology_.layers()) {
      throw EnvError("session " + std::to_string(s) +
                     " reports a different layer table than session 0");
    }
  }
}

ExternalEnvironment::~ExternalEnvironment() {
  try {
    shutdown();
  } catch (...) {
  }
}

void ExternalEnvironment::shutdown() {
  if (shut_down_) return;
  shut_down_ = true;
  for (std::size_t s = 0; s < sessions_.size(); ++s) {
    try {
      sessions_[s]->send_line(protocol::shutdown_request().dump());
      sessions_[s]->receive_line(std::chrono::milliseconds(5000));
    } catch (const EnvError&) {
    }
  }
}

Json ExternalEnvironment::request(std::size_t session, const Json& req) {
  auto& ch = *sessions_.at(session);
  ch.send_line(req.dump());
  const std::string line = ch.receive_line(timeout_);
  Json reply;
  try {
    reply = Json::parse(line);
  } catch (const Json::parse_error&) {
    throw ProtocolError(ch.describe() + ": malformed reply line", line);
  }
  if (!reply.is_object() || !reply.contains("ok") || !reply.at("ok").is_boolean()) {
    throw ProtocolError(ch.describe() + ": reply lacks boolean 'ok'", line);
  }
  if (!reply.at("ok").get<bool>()) {
    const auto& err = reply.value("error", Json("unspecified error"));
    throw EnvError(ch.describe() + " reported an error: " +
                   (err.is_string() ? err.get<std::string>() : err.dump()));
  }
  return reply;
}

WeightTensor ExternalEnvironment::state_of(int layer_index) {
  const auto& spec = topology_.layer(layer_index);
  const Json reply = request(0, protocol::state_request(layer_index));
  const std::string line = reply.dump();
  try {
    const auto dims = reply.at("dims").get<std::vector<int>>();
    if (dims.size() != 4 || dims[2] != dims[3] || dims[0] != spec.num_filters ||
        dims[1] != spec.in_channels || dims[2] != spec.kernel_size) {
      throw ProtocolError("state dims do not match layer " + std::to_string(layer_index), line);
    }
    return WeightTensor(dims[0], dims[1], dims[2],
                        reply.at("values").get<std::vector<double>>());
  } catch (const Json::exception& e) {
    throw ProtocolError(std::string("bad state reply (") + e.what() + ")", line);
  } catch (const std::invalid_argument& e) {
    throw ProtocolError(std::string("bad state tensor (") + e.what() + ")", line);
  }
}

double ExternalEnvironment::evaluate_on(std::size_t session,
                                        std::span<const PruneMask> masks,
                                        double epochs, int sample) {
  const Json reply = request(session, protocol::evaluate_request(masks, epochs, sample));
  return finite_number(reply, "acc", reply.dump());
}

double ExternalEnvironment::evaluate(std::span<const PruneMask> masks,
                                     double epochs, int sample) {
  return evaluate_on(0, masks, epochs, sample);
}

std::vector<double> ExternalEnvironment::evaluate_batch(
    std::span<const EvalRequest> requests, int parallelism) {
  const std::size_t width = static_cast<std::size_t>(
      std::max(1, std::min(parallelism, max_parallel_evaluations())));
  std::vector<double> acc(requests.size());
  if (width == 1) {
    for (std::size_t j = 0; j < requests.size(); ++j) {
      acc[j] = evaluate_on(0, requests[j].masks, requests[j].epochs, requests[j].sample);
    }
    return acc;
  }
  // Session s handles requests s, s + width, ... in order.
  std::vector<std::future<void>> workers;
  for (std::size_t s = 0; s < width; ++s) {
    workers.push_back(std::async(std::launch::async, [this, s, width, &requests, &acc] {
      for (std::size_t j = s; j < requests.size(); j += width) {
        acc[j] = evaluate_on(s, requests[j].masks, requests[j].epochs, requests[j].sample);
      }
    }));
  }
  for (auto& w : workers) w.get();
  return acc;
}

CommitResult ExternalEnvironment::commit(std::span<const PruneMask> masks,
                                         double final_epochs) {
  CommitResult result;
  for (std::size_t s = 0; s < sessions_.size(); ++s) {
    const Json reply = request(s, protocol::commit_request(masks, final_epochs));
    if (s == 0) {
      const std::string line = reply.dump();
      result.acc = finite_number(reply, "acc", line);
      if (reply.contains("test_acc")) result.test_acc = finite_number(reply, "test_acc", line);
    }
  }
  for (const auto& m : masks) topology_.commit(m);
  base_acc_ = result.acc;
  return result;
}

}  // namespace l2pf::env
