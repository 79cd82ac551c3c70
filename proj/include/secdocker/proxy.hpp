// Copyright the SecDocker authors. SPDX-License-Identifier: Apache-2.0

#ifndef SECDOCKER_PROXY_HPP_
#define SECDOCKER_PROXY_HPP_

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <mutex>
#include <string>
#include <thread>
#include <unordered_map>

#include "secdocker/audit.hpp"
#include "secdocker/config.hpp"
#include "secdocker/http.hpp"
#include "secdocker/net.hpp"
#include "secdocker/plugins.hpp"

namespace secdocker::proxy {

struct ProxySettings {
  std::string listen_address = "0.0.0.0:8999";
  std::string upstream_address;
  std::chrono::seconds idle_timeout{120};
  int max_connections = 1024;
  std::chrono::seconds drain_timeout{10};
  bool verbose = false;
};

enum class ExchangeOutcome { Forwarded, ForwardedMutated, Denied, RelayedRaw };
std::string_view to_string(ExchangeOutcome outcome);

// The intercepting proxy: accepts clients concurrently, relays passthrough
// endpoints verbatim, and runs create requests through plugins and the
// current profile snapshot. Denied requests never reach the upstream daemon.
class Proxy {
 public:
  Proxy(ProxySettings settings, config::ProfileStore& store,
        plugins::PluginRegistry registry, audit::AuditSink& sink);
  ~Proxy();

  Proxy(const Proxy&) = delete;
  Proxy& operator=(const Proxy&) = delete;

  // Binds the listener and spawns the accept loop. Throws net::BindError.
  void start();
  // Drains in-flight exchanges up to drain_timeout, then force-closes.
  void stop();

  uint16_t port() const { return listener_.port(); }
  size_t active_connections() const;

 private:
  struct ConnectionSlots {
    int client_fd = -1;
    int upstream_fd = -1;
  };

  void accept_loop();
  void connection_main(uint64_t id, net::Socket client, std::string peer);
  void handle_connection(uint64_t id, net::Socket& client,
                         const std::string& peer);
  void set_upstream_fd(uint64_t id, int fd);

  ProxySettings settings_;
  config::ProfileStore& store_;
  plugins::PluginRegistry registry_;
  audit::AuditSink& sink_;

  net::Listener listener_;
  std::thread accept_thread_;
  std::atomic<bool> draining_{false};
  bool started_ = false;

  mutable std::mutex conn_mutex_;
  std::condition_variable conn_cv_;
  std::unordered_map<uint64_t, ConnectionSlots> connections_;
  std::unordered_map<uint64_t, std::thread> threads_;
  std::vector<uint64_t> finished_;
  uint64_t next_id_ = 1;
};

// Blocking convenience for the CLI: start, serve until stop_flag flips, then
// drain. Throws net::BindError when the listener cannot bind.
void run_proxy(const ProxySettings& settings, config::ProfileStore& store,
               plugins::PluginRegistry registry, audit::AuditSink& sink,
               const std::atomic<bool>& stop_flag);

}  // namespace secdocker::proxy

#endif  // SECDOCKER_PROXY_HPP_
