#include "l2pf/channel.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <pthread.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <stdexcept>

#include "l2pf/errors.hpp"

namespace l2pf::channel {
namespace {

std::string errno_text(const char* what) {
  return std::string(what) + ": " + std::strerror(errno);
}

// Pipe write that reports EPIPE instead of raising SIGPIPE.
ssize_t write_no_sigpipe(int fd, const char* data, std::size_t size) {
  sigset_t pipe_set, old_set;
  sigemptyset(&pipe_set);
  sigaddset(&pipe_set, SIGPIPE);
  sigset_t pending;
  sigpending(&pending);
  const bool was_pending = sigismember(&pending, SIGPIPE);
  pthread_sigmask(SIG_BLOCK, &pipe_set, &old_set);
  const ssize_t n = ::write(fd, data, size);
  const int saved = errno;
  if (n < 0 && saved == EPIPE && !was_pending) {
    const timespec zero{0, 0};
    while (sigtimedwait(&pipe_set, nullptr, &zero) < 0 && errno == EINTR) {
    }
  }
  pthread_sigmask(SIG_SETMASK, &old_set, nullptr);
  errno = saved;
  return n;
}

}  // namespace

FdChannel::FdChannel(int read_fd, int write_fd, std::string description)
    : read_fd_(read_fd), write_fd_(write_fd), description_(std::move(description)) {}

FdChannel::~FdChannel() { close_fds(); }

void FdChannel::close_fds() {
  if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
  if (read_fd_ >= 0) ::close(read_fd_);
  read_fd_ = write_fd_ = -1;
}

void FdChannel::send_line(std::string_view line) {
  if (write_fd_ < 0) throw EnvError(description_ + ": channel closed");
  std::string data(line);
  data.push_back('\n');
  std::size_t done = 0;
  while (done < data.size()) {
    const ssize_t n = ::send(write_fd_, data.data() + done, data.size() - done,
                             MSG_NOSIGNAL);
    if (n < 0 && errno == ENOTSOCK) {
      const ssize_t m = write_no_sigpipe(write_fd_, data.data() + done, data.size() - done);
      if (m < 0) {
        if (errno == EINTR) continue;
        throw EnvError(description_ + ": " + errno_text("write"));
      }
      done += static_cast<std::size_t>(m);
      continue;
    }
    if (n < 0) {
      if (errno == EINTR) continue;
      throw EnvError(description_ + ": " + errno_text("send"));
    }
    done += static_cast<std::size_t>(n);
  }
}

std::string FdChannel::receive_line(std::chrono::milliseconds timeout) {
  if (read_fd_ < 0) throw EnvError(description_ + ": channel closed");
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  char chunk[65536];
  for (;;) {
    const auto nl = buffer_.find('\n');
    if (nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      return line;
    }
    const auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (remaining.count() <= 0) {
      throw EnvError(description_ + ": timed out waiting for reply");
    }
    pollfd pfd{read_fd_, POLLIN, 0};
    const int wait_ms = static_cast<int>(
        std::min<long long>(remaining.count(), 1LL << 30));
    const int rc = ::poll(&pfd, 1, wait_ms);
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw EnvError(description_ + ": " + errno_text("poll"));
    }
    if (rc == 0) continue;
    const ssize_t n = ::read(read_fd_, chunk, sizeof chunk);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw EnvError(description_ + ": " + errno_text("read"));
    }
    if (n == 0) throw EnvError(description_ + ": backend closed the connection");
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

ProcessChannel::ProcessChannel(int read_fd, int write_fd, pid_t pid,
                               std::string description)
    : FdChannel(read_fd, write_fd, std::move(description)), pid_(pid) {}

std::unique_ptr<ProcessChannel> ProcessChannel::spawn(
    const std::vector<std::string>& argv) {
  if (argv.empty()) throw EnvError("spawn: empty command line");
  int to_child[2];
  int from_child[2];
  if (::pipe2(to_child, O_CLOEXEC) != 0) throw EnvError(errno_text("pipe"));
  if (::pipe2(from_child, O_CLOEXEC) != 0) {
    ::close(to_child[0]);
    ::close(to_child[1]);
    throw EnvError(errno_text("pipe"));
  }
  // Written only if exec fails; closed by a successful exec.
  int status_pipe[2];
  if (::pipe2(status_pipe, O_CLOEXEC) != 0) {
    for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1]}) ::close(fd);
    throw EnvError(errno_text("pipe"));
  }
  std::vector<char*> cargv;
  for (const auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
  cargv.push_back(nullptr);

  const pid_t pid = ::fork();
  if (pid < 0) {
    for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1],
                   status_pipe[0], status_pipe[1]}) {
      ::close(fd);
    }
    throw EnvError(errno_text("fork"));
  }
  if (pid == 0) {
    ::dup2(to_child[0], STDIN_FILENO);
    ::dup2(from_child[1], STDOUT_FILENO);
    ::execvp(cargv[0], cargv.data());
    const int err = errno;
    [[maybe_unused]] auto n = ::write(status_pipe[1], &err, sizeof err);
    ::_exit(127);
  }
  ::close(to_child[0]);
  ::close(from_child[1]);
  ::close(status_pipe[1]);
  int child_errno = 0;
  ssize_t got;
  do {
    got = ::read(status_pipe[0], &child_errno, sizeof child_errno);
  } while (got < 0 && errno == EINTR);
  ::close(status_pipe[0]);
  if (got == static_cast<ssize_t>(sizeof child_errno)) {
    ::close(to_child[1]);
    ::close(from_child[0]);
    int status = 0;
    ::waitpid(pid, &status, 0);
    throw EnvError("cannot start backend '" + argv[0] + "': " + std::strerror(child_errno));
  }
  std::string desc = "backend '" + argv[0] + "' (pid " + std::to_string(pid) + ")";
  return std::unique_ptr<ProcessChannel>(
      new ProcessChannel(from_child[0], to_child[1], pid, std::move(desc)));
}

ProcessChannel::~ProcessChannel() {
  close_fds();
  if (pid_ > 0) {
    int status = 0;
    // Give the child a moment to exit after stdin closes, then insist.
    for (int i = 0; i < 50; ++i) {
      if (::waitpid(pid_, &status, WNOHANG) == pid_) return;
      ::usleep(20000);
    }
    ::kill(pid_, SIGTERM);
    ::waitpid(pid_, &status, 0);
  }
}

SocketChannel::SocketChannel(int fd, std::string description)
    : FdChannel(fd, fd, std::move(description)) {}

std::unique_ptr<SocketChannel> SocketChannel::connect(const std::string& host,
                                                      int port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string port_text = std::to_string(port);
  if (const int rc = ::getaddrinfo(host.c_str(), port_text.c_str(), &hints, &res);
      rc != 0) {
    throw EnvError("resolve " + host + ": " + ::gai_strerror(rc));
  }
  int fd = -1;
  for (addrinfo* p = res; p; p = p->ai_next) {
    fd = ::socket(p->ai_family, p->ai_socktype | SOCK_CLOEXEC, p->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, p->ai_addr, p->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) throw EnvError("connect " + host + ":" + port_text + ": " + std::strerror(errno));
  return std::unique_ptr<SocketChannel>(
      new SocketChannel(fd, "backend " + host + ":" + port_text));
}

TcpListener::TcpListener(int port) {
  fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd_ < 0) throw std::runtime_error(errno_text("socket"));
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 ||
      ::listen(fd_, 1) != 0) {
    const std::string msg = errno_text("bind/listen");
    ::close(fd_);
    throw std::runtime_error(msg);
  }
  socklen_t len = sizeof addr;
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpListener::~TcpListener() {
  if (fd_ >= 0) ::close(fd_);
}

int TcpListener::accept_one() {
  const int conn = ::accept4(fd_, nullptr, nullptr, SOCK_CLOEXEC);
  if (conn < 0) throw std::runtime_error(errno_text("accept"));
  return conn;
}

}  // namespace l2pf::channel
