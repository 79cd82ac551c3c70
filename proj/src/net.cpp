// Copyright the SecDocker authors. SPDX-License-Identifier: Apache-2.0

#include "secdocker/net.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <csignal>
#include <cstring>

namespace secdocker::net {

namespace {

constexpr int kPollSliceMs = 250;

std::string errno_string() { return std::strerror(errno); }

// Waits for the given poll events. Honors the stop flag between slices and an
// overall deadline when timeout_ms >= 0.
ReadStatus wait_for(int fd, short events, int timeout_ms,
                    const std::atomic<bool>* stop) {
  using clock = std::chrono::steady_clock;
  const auto deadline =
      timeout_ms >= 0 ? clock::now() + std::chrono::milliseconds(timeout_ms)
                      : clock::time_point::max();
  for (;;) {
    if (stop != nullptr && stop->load()) return ReadStatus::Stopped;
    int slice = kPollSliceMs;
    if (timeout_ms >= 0) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
                            deadline - clock::now())
                            .count();
      if (left <= 0) return ReadStatus::Timeout;
      slice = static_cast<int>(std::min<long long>(left, kPollSliceMs));
    }
    struct pollfd pfd = {fd, events, 0};
    const int rc = ::poll(&pfd, 1, slice);
    if (rc > 0) {
      if (pfd.revents & (events | POLLHUP | POLLERR)) return ReadStatus::Data;
    } else if (rc < 0 && errno != EINTR) {
      return ReadStatus::Error;
    }
  }
}

}  // namespace

Result<HostPort, std::string> parse_host_port(const std::string& address) {
  const auto colon = address.rfind(':');
  if (colon == std::string::npos || colon == 0 ||
      colon == address.size() - 1) {
    return std::string("address must be host:port, got '" + address + "'");
  }
  const std::string host = address.substr(0, colon);
  const std::string port_str = address.substr(colon + 1);
  int port = 0;
  for (char c : port_str) {
    if (c < '0' || c > '9') {
      return std::string("invalid port '" + port_str + "'");
    }
    port = port * 10 + (c - '0');
    if (port > 65535) return std::string("port out of range: " + port_str);
  }
  return HostPort{host, static_cast<uint16_t>(port)};
}

Socket& Socket::operator=(Socket&& other) noexcept {
  if (this != &other) {
    close();
    fd_ = other.fd_;
    other.fd_ = -1;
  }
  return *this;
}

void Socket::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

void Socket::shutdown_both() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

bool Socket::send_all(std::string_view data) {
  size_t off = 0;
  while (off < data.size()) {
    const ssize_t n = ::send(fd_, data.data() + off, data.size() - off,
                             MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      if (errno == EAGAIN || errno == EWOULDBLOCK) {
        if (wait_for(fd_, POLLOUT, -1, nullptr) != ReadStatus::Data)
          return false;
        continue;
      }
      return false;
    }
    off += static_cast<size_t>(n);
  }
  return true;
}

ReadResult Socket::read_some(char* buf, size_t cap, int timeout_ms,
                             const std::atomic<bool>* stop) {
  const ReadStatus st = wait_for(fd_, POLLIN, timeout_ms, stop);
  if (st != ReadStatus::Data) return {st, 0};
  for (;;) {
    const ssize_t n = ::recv(fd_, buf, cap, 0);
    if (n > 0) return {ReadStatus::Data, static_cast<size_t>(n)};
    if (n == 0) return {ReadStatus::Eof, 0};
    if (errno == EINTR) continue;
    return {ReadStatus::Error, 0};
  }
}

std::string Socket::peer_address() const {
  sockaddr_storage addr{};
  socklen_t len = sizeof(addr);
  if (::getpeername(fd_, reinterpret_cast<sockaddr*>(&addr), &len) != 0) {
    return "unknown";
  }
  char host[NI_MAXHOST];
  char serv[NI_MAXSERV];
  if (::getnameinfo(reinterpret_cast<sockaddr*>(&addr), len, host,
                    sizeof(host), serv, sizeof(serv),
                    NI_NUMERICHOST | NI_NUMERICSERV) != 0) {
    return "unknown";
  }
  return std::string(host) + ":" + serv;
}

Result<Socket, std::string> tcp_connect(const HostPort& target,
                                        int timeout_ms) {
  struct addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  struct addrinfo* res = nullptr;
  const std::string port_str = std::to_string(target.port);
  const int rc = ::getaddrinfo(target.host.c_str(), port_str.c_str(), &hints,
                               &res);
  if (rc != 0) {
    return std::string("cannot resolve '" + target.host +
                       "': " + gai_strerror(rc));
  }
  std::string last_error = "no addresses";
  for (struct addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
    const int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) {
      last_error = errno_string();
      continue;
    }
    const int flags = ::fcntl(fd, F_GETFL, 0);
    ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
    int crc = ::connect(fd, ai->ai_addr, ai->ai_addrlen);
    if (crc != 0 && errno == EINPROGRESS) {
      if (wait_for(fd, POLLOUT, timeout_ms, nullptr) == ReadStatus::Data) {
        int err = 0;
        socklen_t elen = sizeof(err);
        ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &elen);
        crc = err == 0 ? 0 : -1;
        errno = err;
      } else {
        crc = -1;
        errno = ETIMEDOUT;
      }
    }
    if (crc == 0) {
      ::fcntl(fd, F_SETFL, flags);  // back to blocking
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      ::freeaddrinfo(res);
      return Socket(fd);
    }
    last_error = errno_string();
    ::close(fd);
  }
  ::freeaddrinfo(res);
  return std::string("connect to " + target.host + ":" + port_str +
                     " failed: " + last_error);
}

void Listener::bind_and_listen(const HostPort& address, int backlog) {
  close();
  struct addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = AI_PASSIVE;
  struct addrinfo* res = nullptr;
  const std::string port_str = std::to_string(address.port);
  const int rc = ::getaddrinfo(address.host.c_str(), port_str.c_str(), &hints,
                               &res);
  if (rc != 0) {
    throw BindError("cannot resolve listen address '" + address.host +
                    "': " + gai_strerror(rc));
  }
  std::string last_error = "no addresses";
  for (struct addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
    const int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) {
      last_error = errno_string();
      continue;
    }
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    if (::bind(fd, ai->ai_addr, ai->ai_addrlen) != 0 ||
        ::listen(fd, backlog) != 0) {
      last_error = errno_string();
      ::close(fd);
      continue;
    }
    sockaddr_storage bound{};
    socklen_t blen = sizeof(bound);
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&bound), &blen);
    if (bound.ss_family == AF_INET) {
      port_ = ntohs(reinterpret_cast<sockaddr_in*>(&bound)->sin_port);
    } else if (bound.ss_family == AF_INET6) {
      port_ = ntohs(reinterpret_cast<sockaddr_in6*>(&bound)->sin6_port);
    }
    fd_ = fd;
    ::freeaddrinfo(res);
    return;
  }
  ::freeaddrinfo(res);
  throw BindError("cannot listen on " + address.host + ":" + port_str + ": " +
                  last_error);
}

void Listener::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

Listener::Accepted Listener::accept(int timeout_ms,
                                    const std::atomic<bool>* stop) {
  Accepted out;
  const ReadStatus st = wait_for(fd_, POLLIN, timeout_ms, stop);
  if (st != ReadStatus::Data) {
    out.status = st;
    return out;
  }
  sockaddr_storage addr{};
  socklen_t len = sizeof(addr);
  const int cfd = ::accept(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  if (cfd < 0) {
    out.status = ReadStatus::Error;
    return out;
  }
  int one = 1;
  ::setsockopt(cfd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  out.status = ReadStatus::Data;
  out.socket = Socket(cfd);
  out.peer = out.socket.peer_address();
  return out;
}

void ignore_sigpipe() { ::signal(SIGPIPE, SIG_IGN); }

}  // namespace secdocker::net
