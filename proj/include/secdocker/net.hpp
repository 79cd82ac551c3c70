// Copyright the SecDocker authors. SPDX-License-Identifier: Apache-2.0

#ifndef SECDOCKER_NET_HPP_
#define SECDOCKER_NET_HPP_

#include <atomic>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

#include "secdocker/result.hpp"

namespace secdocker::net {

struct HostPort {
  std::string host;
  uint16_t port = 0;
};

// Splits "host:port". The port part is mandatory; port 0 asks the OS for an
// ephemeral port on bind.
Result<HostPort, std::string> parse_host_port(const std::string& address);

enum class ReadStatus { Data, Eof, Timeout, Stopped, Error };

struct ReadResult {
  ReadStatus status = ReadStatus::Error;
  size_t bytes = 0;
};

// Move-only RAII wrapper around a connected TCP socket fd.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  ~Socket() { close(); }

  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  Socket(Socket&& other) noexcept : fd_(other.fd_) { other.fd_ = -1; }
  Socket& operator=(Socket&& other) noexcept;

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void close();
  // Wakes up blocked reads/writes from another thread (used for force-close
  // during shutdown). The fd itself stays open until close().
  void shutdown_both();

  // Writes the whole buffer. Returns false on any error.
  bool send_all(std::string_view data);

  // Reads at most cap bytes. Waits up to timeout_ms (-1 = forever), checking
  // the optional stop flag periodically while waiting.
  ReadResult read_some(char* buf, size_t cap, int timeout_ms,
                       const std::atomic<bool>* stop = nullptr);

  std::string peer_address() const;

 private:
  int fd_ = -1;
};

Result<Socket, std::string> tcp_connect(const HostPort& target,
                                        int timeout_ms = 5000);

struct BindError : std::runtime_error {
  explicit BindError(const std::string& what) : std::runtime_error(what) {}
};

class Listener {
 public:
  Listener() = default;
  ~Listener() { close(); }
  Listener(const Listener&) = delete;
  Listener& operator=(const Listener&) = delete;

  // Throws BindError on failure (occupied port, bad address, ...).
  void bind_and_listen(const HostPort& address, int backlog = 128);
  uint16_t port() const { return port_; }
  bool valid() const { return fd_ >= 0; }
  void close();

  // Waits up to timeout_ms for a client; checks stop between poll slices.
  struct Accepted {
    ReadStatus status = ReadStatus::Error;
    Socket socket;
    std::string peer;
  };
  Accepted accept(int timeout_ms, const std::atomic<bool>* stop = nullptr);

 private:
  int fd_ = -1;
  uint16_t port_ = 0;
};

// Process-wide: broken pipes must surface as send errors, not signals.
void ignore_sigpipe();

}  // namespace secdocker::net

#endif  // SECDOCKER_NET_HPP_
