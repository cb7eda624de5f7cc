#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "l2pf/core.hpp"
#include "l2pf/environment.hpp"

namespace l2pf::protocol {

// Line-delimited JSON, one object per line, strictly request/reply:
//
//   {"op":"hello","version":1}
//     -> {"ok":true,"layers":[{"index","N","c","k","block","prunable"}],"acc_base"}
//   {"op":"state","layer":L}            -> {"ok":true,"dims":[N,c,k,k],"values":[...]}
//   {"op":"evaluate","masks":[{"layer":L,"bits":"0101"}],"epochs":E,"sample":j}
//                                       -> {"ok":true,"acc":A}
//   {"op":"commit","masks":[...],"final_epochs":E} -> {"ok":true,"acc":A}
//   {"op":"shutdown"}                   -> {"ok":true}
//
// Failures reply {"ok":false,"error":"..."}.
inline constexpr int kVersion = 1;

using Json = nlohmann::json;

Json layer_to_json(const LayerSpec& layer);
LayerSpec layer_from_json(const Json& j);
Json masks_to_json(std::span<const PruneMask> masks);
std::vector<PruneMask> masks_from_json(const Json& j);

Json hello_request();
Json state_request(int layer);
Json evaluate_request(std::span<const PruneMask> masks, double epochs, int sample);
Json commit_request(std::span<const PruneMask> masks, double final_epochs);
Json shutdown_request();

// Serves an Environment over the protocol.
class Server {
 public:
  explicit Server(env::Environment& env) : env_(env) {}

  // Handles one request line and returns the reply line (no newline).
  std::string handle(std::string_view line);
  bool shutdown_requested() const { return shutdown_; }

  // Reads requests until shutdown or end of input.
  void serve(std::istream& in, std::ostream& out);
  // Same, on a file descriptor pair.
  void serve_fd(int in_fd, int out_fd);

 private:
  Json dispatch(const Json& request);

  env::Environment& env_;
  bool shutdown_ = false;
};

}  // namespace l2pf::protocol
