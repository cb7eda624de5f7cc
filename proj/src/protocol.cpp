#include "l2pf/protocol.hpp"

#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace l2pf::protocol {

Json layer_to_json(const LayerSpec& layer) {
  Json j{{"index", layer.layer_index},
         {"N", layer.num_filters},
         {"c", layer.in_channels},
         {"k", layer.kernel_size},
         {"block", nullptr},
         {"prunable", layer.prunable}};
  if (layer.block_id) j["block"] = *layer.block_id;
  return j;
}

LayerSpec layer_from_json(const Json& j) {
  LayerSpec l;
  l.layer_index = j.at("index").get<int>();
  l.num_filters = j.at("N").get<int>();
  l.in_channels = j.at("c").get<int>();
  l.kernel_size = j.at("k").get<int>();
  if (j.contains("block") && !j.at("block").is_null()) {
    l.block_id = j.at("block").get<int>();
  }
  l.prunable = j.at("prunable").get<bool>();
  return l;
}

Json masks_to_json(std::span<const PruneMask> masks) {
  Json arr = Json::array();
  for (const auto& m : masks) {
    arr.push_back(Json{{"layer", m.layer_index()}, {"bits", m.bitstring()}});
  }
  return arr;
}

std::vector<PruneMask> masks_from_json(const Json& j) {
  if (!j.is_array()) throw std::invalid_argument("masks must be an array");
  std::vector<PruneMask> masks;
  for (const auto& m : j) {
    masks.push_back(PruneMask::from_bitstring(m.at("layer").get<int>(),
                                              m.at("bits").get<std::string>()));
  }
  return masks;
}

Json hello_request() { return Json{{"op", "hello"}, {"version", kVersion}}; }
Json state_request(int layer) { return Json{{"op", "state"}, {"layer", layer}}; }
Json evaluate_request(std::span<const PruneMask> masks, double epochs, int sample) {
  return Json{{"op", "evaluate"},
              {"masks", masks_to_json(masks)},
              {"epochs", epochs},
              {"sample", sample}};
}
Json commit_request(std::span<const PruneMask> masks, double final_epochs) {
  return Json{{"op", "commit"},
              {"masks", masks_to_json(masks)},
              {"final_epochs", final_epochs}};
}
Json shutdown_request() { return Json{{"op", "shutdown"}}; }

Json Server::dispatch(const Json& req) {
  const std::string op = req.at("op").get<std::string>();
  if (op == "hello") {
    const int version = req.at("version").get<int>();
    if (version != kVersion) {
      throw std::invalid_argument("unsupported protocol version " +
                                  std::to_string(version));
    }
    const ModelTopology topology = env_.topology();
    Json layers = Json::array();
    for (const auto& l : topology.layers()) layers.push_back(layer_to_json(l));
    return Json{{"ok", true}, {"layers", layers}, {"acc_base", env_.base_accuracy()}};
  }
  if (op == "state") {
    const auto w = env_.state_of(req.at("layer").get<int>());
    return Json{{"ok", true},
                {"dims", {w.num_filters(), w.in_channels(), w.kernel_size(),
                          w.kernel_size()}},
                {"values", std::vector<double>(w.values().begin(), w.values().end())}};
  }
  if (op == "evaluate") {
    const auto masks = masks_from_json(req.at("masks"));
    const double acc = env_.evaluate(masks, req.at("epochs").get<double>(),
                                     req.value("sample", 0));
    return Json{{"ok", true}, {"acc", acc}};
  }
  if (op == "commit") {
    const auto masks = masks_from_json(req.at("masks"));
    const auto result = env_.commit(masks, req.at("final_epochs").get<double>());
    Json reply{{"ok", true}, {"acc", result.acc}};
    if (result.test_acc) reply["test_acc"] = *result.test_acc;
    return reply;
  }
  if (op == "shutdown") {
    shutdown_ = true;
    return Json{{"ok", true}};
  }
  throw std::invalid_argument("unknown op '" + op + "'");
}

std::string Server::handle(std::string_view line) {
  Json reply;
  try {
    const Json req = Json::parse(line);
    if (!req.is_object()) throw std::invalid_argument("request must be a JSON object");
    reply = dispatch(req);
  } catch (const std::exception& e) {
    reply = Json{{"ok", false}, {"error", e.what()}};
  }
  return reply.dump();
}

void Server::serve(std::istream& in, std::ostream& out) {
  std::string line;
  while (!shutdown_ && std::getline(in, line)) {
    if (line.empty()) continue;
    out << handle(line) << '\n' << std::flush;
  }
}

void Server::serve_fd(int in_fd, int out_fd) {
  std::string buffer;
  char chunk[4096];
  auto write_all = [out_fd](const std::string& s) {
    std::size_t done = 0;
    while (done < s.size()) {
      const ssize_t n = ::write(out_fd, s.data() + done, s.size() - done);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw std::runtime_error(std::string("write: ") + std::strerror(errno));
      }
      done += static_cast<std::size_t>(n);
    }
  };
  while (!shutdown_) {
    const auto nl = buffer.find('\n');
    if (nl != std::string::npos) {
      const std::string line = buffer.substr(0, nl);
      buffer.erase(0, nl + 1);
      if (!line.empty()) write_all(handle(line) + "\n");
      continue;
    }
    const ssize_t n = ::read(in_fd, chunk, sizeof chunk);
    if (n == 0) return;
    if (n < 0) {
      if (errno == EINTR) continue;
      throw std::runtime_error(std::string("read: ") + std::strerror(errno));
    }
    buffer.append(chunk, static_cast<std::size_t>(n));
  }
}

}  // namespace l2pf::protocol
