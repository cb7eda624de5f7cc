#pragma once

#include <stdexcept>
#include <string>

namespace l2pf {

// Configuration could not be loaded or failed validation.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The environment (synthetic or external backend) failed to answer a request.
class EnvError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A reply from an external backend did not match the wire schema.
class ProtocolError : public EnvError {
 public:
  ProtocolError(const std::string& what, std::string offending_line)
      : EnvError(what + ": " + offending_line),
        line_(std::move(offending_line)) {}

  const std::string& line() const noexcept { return line_; }

 private:
  std::string line_;
};

// Internal consistency check failed (a bug, not bad input).
class InvariantError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace l2pf
