#pragma once

#include <sys/types.h>

#include <chrono>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace l2pf::channel {

// A bidirectional, newline-framed text stream to one backend session.
class LineChannel {
 public:
  virtual ~LineChannel() = default;
  virtual void send_line(std::string_view line) = 0;
  // Blocks for the next line (without its newline). Throws EnvError on
  // timeout, end of stream, or transport failure.
  virtual std::string receive_line(std::chrono::milliseconds timeout) = 0;
  virtual std::string describe() const = 0;
};

// Line framing over a pair of file descriptors.
class FdChannel : public LineChannel {
 public:
  FdChannel(int read_fd, int write_fd, std::string description);
  ~FdChannel() override;
  FdChannel(const FdChannel&) = delete;
  FdChannel& operator=(const FdChannel&) = delete;

  void send_line(std::string_view line) override;
  std::string receive_line(std::chrono::milliseconds timeout) override;
  std::string describe() const override { return description_; }

 protected:
  void close_fds();

 private:
  int read_fd_;
  int write_fd_;
  std::string description_;
  std::string buffer_;
};

// Spawns argv as a child process and talks to its stdin/stdout.
class ProcessChannel final : public FdChannel {
 public:
  static std::unique_ptr<ProcessChannel> spawn(const std::vector<std::string>& argv);
  ~ProcessChannel() override;

  pid_t pid() const { return pid_; }

 private:
  ProcessChannel(int read_fd, int write_fd, pid_t pid, std::string description);
  pid_t pid_;
};

// TCP client connection.
class SocketChannel final : public FdChannel {
 public:
  static std::unique_ptr<SocketChannel> connect(const std::string& host, int port);

 private:
  SocketChannel(int fd, std::string description);
};

// Loopback TCP listener for serving one backend session.
class TcpListener {
 public:
  // port 0 picks a free port.
  explicit TcpListener(int port);
  ~TcpListener();
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  int port() const { return port_; }
  // Blocks for one connection and returns its fd.
  int accept_one();

 private:
  int fd_ = -1;
  int port_ = 0;
};

}  // namespace l2pf::channel
