// Copyright the SecDocker authors. SPDX-License-Identifier: Apache-2.0

#include "secdocker/proxy.hpp"

#include <poll.h>
#include <sys/socket.h>

#include <algorithm>

#include "secdocker/docker_model.hpp"
#include "secdocker/policy.hpp"

namespace secdocker::proxy {

namespace {

using std::chrono::steady_clock;

int64_t micros_between(steady_clock::time_point from,
                       steady_clock::time_point to) {
  return std::chrono::duration_cast<std::chrono::microseconds>(to - from)
      .count();
}

// Bidirectional byte pump for upgraded (hijacked) connections; runs until
// either side closes.
void raw_relay(net::Socket& client, net::Socket& upstream,
               std::string client_leftover, std::string upstream_leftover) {
  if (!upstream_leftover.empty() && !client.send_all(upstream_leftover)) {
    return;
  }
  if (!client_leftover.empty() && !upstream.send_all(client_leftover)) {
    return;
  }
  char buf[64 * 1024];
  for (;;) {
    struct pollfd fds[2] = {{client.fd(), POLLIN, 0},
                            {upstream.fd(), POLLIN, 0}};
    const int rc = ::poll(fds, 2, -1);
    if (rc < 0) {
      if (errno == EINTR) continue;
      break;
    }
    bool progressed = false;
    if (fds[0].revents != 0) {
      const net::ReadResult r = client.read_some(buf, sizeof(buf), 0);
      if (r.status == net::ReadStatus::Data) {
        if (!upstream.send_all({buf, r.bytes})) break;
        progressed = true;
      } else if (r.status != net::ReadStatus::Timeout) {
        break;
      }
    }
    if (fds[1].revents != 0) {
      const net::ReadResult r = upstream.read_some(buf, sizeof(buf), 0);
      if (r.status == net::ReadStatus::Data) {
        if (!client.send_all({buf, r.bytes})) break;
        progressed = true;
      } else if (r.status != net::ReadStatus::Timeout) {
        break;
      }
    }
    if (!progressed && rc > 0 &&
        ((fds[0].revents | fds[1].revents) & (POLLHUP | POLLERR)) != 0) {
      break;
    }
  }
  client.shutdown_both();
  upstream.shutdown_both();
}

}  // namespace

std::string_view to_string(ExchangeOutcome outcome) {
  switch (outcome) {
    case ExchangeOutcome::Forwarded: return "forwarded";
    case ExchangeOutcome::ForwardedMutated: return "forwarded-mutated";
    case ExchangeOutcome::Denied: return "denied";
    case ExchangeOutcome::RelayedRaw: return "relayed-raw";
  }
  return "unknown";
}

Proxy::Proxy(ProxySettings settings, config::ProfileStore& store,
             plugins::PluginRegistry registry, audit::AuditSink& sink)
    : settings_(std::move(settings)),
      store_(store),
      registry_(std::move(registry)),
      sink_(sink) {}

Proxy::~Proxy() { stop(); }

void Proxy::start() {
  net::ignore_sigpipe();
  auto listen_hp = net::parse_host_port(settings_.listen_address);
  if (!listen_hp.ok()) {
    throw net::BindError("bad listen address: " + listen_hp.error());
  }
  listener_.bind_and_listen(listen_hp.value());
  started_ = true;

  // One probe connection: warn-and-continue when the daemon is down.
  auto upstream_hp = net::parse_host_port(settings_.upstream_address);
  if (!upstream_hp.ok()) {
    sink_.note("upstream_address_invalid", upstream_hp.error());
  } else {
    auto probe = net::tcp_connect(upstream_hp.value(), 1000);
    if (!probe.ok()) {
      sink_.note("upstream_unreachable", "startup probe: " + probe.error());
    }
  }

  draining_.store(false);
  accept_thread_ = std::thread(&Proxy::accept_loop, this);
}

void Proxy::stop() {
  if (!started_) return;
  draining_.store(true);
  listener_.close();
  if (accept_thread_.joinable()) accept_thread_.join();

  {
    std::unique_lock lock(conn_mutex_);
    conn_cv_.wait_for(lock, settings_.drain_timeout,
                      [&] { return connections_.empty(); });
    // Force-close whatever is still in flight.
    for (const auto& [id, slots] : connections_) {
      if (slots.client_fd >= 0) ::shutdown(slots.client_fd, SHUT_RDWR);
      if (slots.upstream_fd >= 0) ::shutdown(slots.upstream_fd, SHUT_RDWR);
    }
    conn_cv_.wait_for(lock, std::chrono::seconds(5),
                      [&] { return connections_.empty(); });
  }
  std::unordered_map<uint64_t, std::thread> leftover;
  {
    std::lock_guard lock(conn_mutex_);
    leftover.swap(threads_);
    finished_.clear();
  }
  for (auto& [id, thread] : leftover) {
    if (thread.joinable()) thread.join();
  }
  started_ = false;
}

size_t Proxy::active_connections() const {
  std::lock_guard lock(conn_mutex_);
  return connections_.size();
}

void Proxy::set_upstream_fd(uint64_t id, int fd) {
  std::lock_guard lock(conn_mutex_);
  const auto it = connections_.find(id);
  if (it != connections_.end()) it->second.upstream_fd = fd;
}

void Proxy::accept_loop() {
  while (!draining_.load()) {
    // Reap finished connection threads.
    {
      std::vector<uint64_t> done;
      std::lock_guard lock(conn_mutex_);
      done.swap(finished_);
      for (uint64_t id : done) {
        const auto it = threads_.find(id);
        if (it != threads_.end()) {
          it->second.join();
          threads_.erase(it);
        }
      }
    }
    auto accepted = listener_.accept(250, &draining_);
    if (accepted.status == net::ReadStatus::Timeout) continue;
    if (accepted.status != net::ReadStatus::Data) break;

    bool overloaded = false;
    {
      std::lock_guard lock(conn_mutex_);
      if (connections_.size() >=
          static_cast<size_t>(settings_.max_connections)) {
        overloaded = true;
      } else {
        const uint64_t id = next_id_++;
        connections_[id] = {accepted.socket.fd(), -1};
        threads_.emplace(id, std::thread(&Proxy::connection_main, this, id,
                                         std::move(accepted.socket),
                                         std::move(accepted.peer)));
      }
    }
    if (overloaded) {
      accepted.socket.send_all(
          http::craft_error_response(503,
                                     "SecDocker: connection limit reached")
              .serialize());
      sink_.note("connection_limit", accepted.peer);
    }
  }
}

void Proxy::connection_main(uint64_t id, net::Socket client,
                            std::string peer) {
  handle_connection(id, client, peer);
  client.close();
  {
    std::lock_guard lock(conn_mutex_);
    connections_.erase(id);
    finished_.push_back(id);
  }
  conn_cv_.notify_all();
}

void Proxy::handle_connection(uint64_t id, net::Socket& client,
                              const std::string& peer) {
  const int idle_ms =
      static_cast<int>(std::chrono::duration_cast<std::chrono::milliseconds>(
                           settings_.idle_timeout)
                           .count());
  http::SocketSource client_source(client, idle_ms, &draining_);
  http::MessageReader client_reader(client_source);

  net::Socket upstream;
  std::optional<http::SocketSource> upstream_source;
  std::optional<http::MessageReader> upstream_reader;

  const auto ensure_upstream = [&]() -> bool {
    if (upstream.valid()) return true;
    auto hp = net::parse_host_port(settings_.upstream_address);
    if (!hp.ok()) return false;
    auto conn = net::tcp_connect(hp.value(), 5000);
    if (!conn.ok()) return false;
    upstream = conn.take();
    set_upstream_fd(id, upstream.fd());
    upstream_source.emplace(upstream, idle_ms, nullptr);
    upstream_reader.emplace(*upstream_source);
    return true;
  };
  const auto drop_upstream = [&]() {
    upstream_reader.reset();
    upstream_source.reset();
    upstream.close();
    set_upstream_fd(id, -1);
  };
  const auto forward_to_client = [&](std::string_view bytes) {
    return client.send_all(bytes);
  };

  for (;;) {
    auto req_r = client_reader.read_request();
    if (!req_r.ok()) {
      const http::Error& e = req_r.error();
      switch (e.kind) {
        case http::ErrorKind::Closed:
        case http::ErrorKind::Timeout:
        case http::ErrorKind::Stopped:
          return;  // clean end of connection
        case http::ErrorKind::TooLarge:
          client.send_all(http::craft_error_response(
                              413, "SecDocker: request too large: " + e.detail)
                              .serialize());
          return;
        default:
          client.send_all(http::craft_error_response(
                              400,
                              "SecDocker: malformed request: " + e.detail)
                              .serialize());
          return;
      }
    }
    const http::HttpRequest req = req_r.take();
    const bool client_keep = req.keep_alive();
    const auto arrival = steady_clock::now();

    if (docker::classify_endpoint(req.method, req.path) ==
        docker::EndpointClass::Passthrough) {
      if (settings_.verbose) {
        sink_.note("passthrough", req.method + " " + req.path);
      }
      if (!ensure_upstream()) {
        client.send_all(http::craft_error_response(
                            502, "SecDocker: upstream unreachable")
                            .serialize());
        sink_.note("upstream_unreachable", req.method + " " + req.path);
        return;
      }
      if (!upstream.send_all(req.raw)) {
        client.send_all(http::craft_error_response(
                            502, "SecDocker: upstream write failed")
                            .serialize());
        sink_.note("upstream_error", req.method + " " + req.path);
        return;
      }
      http::RelayedResponse info;
      auto resp_r = upstream_reader->read_response(req.method,
                                                   forward_to_client, &info);
      if (!resp_r.ok()) {
        if (!info.first_byte_seen) {
          client.send_all(http::craft_error_response(
                              502,
                              "SecDocker: upstream failed: " +
                                  resp_r.error().detail)
                              .serialize());
        }
        sink_.note("upstream_error", resp_r.error().detail);
        return;
      }
      if (info.upgrade) {
        if (settings_.verbose) {
          sink_.note("exchange", std::string(to_string(
                                     ExchangeOutcome::RelayedRaw)));
        }
        raw_relay(client, upstream, client_reader.take_leftover(),
                  upstream_reader->take_leftover());
        return;
      }
      if (info.close_after) drop_upstream();
      if (!client_keep || info.close_after) return;
      continue;
    }

    // Intercepted create request: exactly one audit record per exit path.
    audit::AuditRecord rec;
    rec.client_address = peer;
    rec.method = req.method;
    rec.path = req.path;

    auto spec_r = docker::parse_create_request(req.body, req.query);
    if (!spec_r.ok()) {
      // Fail-closed: an uninspectable create never reaches the daemon.
      rec.decision = audit::DecisionLabel::Error;
      rec.reasons = {spec_r.error().detail};
      rec.latency_micros = micros_between(arrival, steady_clock::now());
      client.send_all(http::craft_error_response(
                          400, "SecDocker: cannot inspect create request: " +
                                   spec_r.error().detail)
                          .serialize());
      sink_.record(std::move(rec));
      if (!client_keep) return;
      continue;
    }
    const docker::ContainerRequestSpec spec = spec_r.take();
    rec.image = spec.image;

    std::vector<plugins::PluginVerdict> verdicts;
    const plugins::PluginVerdict aggregate =
        plugins::run_pre_admission(registry_, spec, &verdicts);
    for (const plugins::PluginVerdict& v : verdicts) {
      rec.plugin_verdicts.push_back(plugins::describe(v));
    }
    if (aggregate.deny) {
      rec.decision = audit::DecisionLabel::Denied;
      for (const plugins::PluginVerdict& v : verdicts) {
        if (v.deny) rec.reasons.push_back("plugin:" + plugins::describe(v));
      }
      rec.latency_micros = micros_between(arrival, steady_clock::now());
      client.send_all(http::craft_error_response(
                          403, "SecDocker: admission denied by plugin '" +
                                   aggregate.plugin_name +
                                   "': " + aggregate.reason)
                          .serialize());
      sink_.record(std::move(rec));
      if (!client_keep) return;
      continue;
    }

    const auto snapshot = store_.snapshot();
    const policy::Decision decision = policy::evaluate(*snapshot, spec);
    if (decision.denied()) {
      rec.decision = audit::DecisionLabel::Denied;
      for (const policy::Violation& v : decision.violations()) {
        rec.reasons.push_back(policy::describe(v));
      }
      rec.latency_micros = micros_between(arrival, steady_clock::now());
      client.send_all(
          http::craft_denial_response(decision.violations()).serialize());
      sink_.record(std::move(rec));
      if (settings_.verbose) {
        sink_.note("exchange",
                   std::string(to_string(ExchangeOutcome::Denied)));
      }
      if (!client_keep) return;
      continue;
    }

    std::string out_bytes;
    ExchangeOutcome outcome;
    if (decision.kind() == policy::Decision::Kind::Allow) {
      out_bytes = req.raw;  // untouched requests forward byte-exact
      rec.decision = audit::DecisionLabel::Allowed;
      outcome = ExchangeOutcome::Forwarded;
    } else {
      auto [mutated, records] =
          policy::apply_restrictions(snapshot->restrictions, spec);
      out_bytes =
          http::rewrite_request(req, docker::render_create_body(mutated));
      rec.decision = audit::DecisionLabel::Mutated;
      for (const policy::MutationRecord& m : records) {
        rec.reasons.push_back(policy::describe(m));
      }
      outcome = ExchangeOutcome::ForwardedMutated;
    }

    if (!ensure_upstream() || !upstream.send_all(out_bytes)) {
      rec.decision = audit::DecisionLabel::Error;
      rec.reasons = {"upstream unreachable"};
      rec.latency_micros = micros_between(arrival, steady_clock::now());
      client.send_all(http::craft_error_response(
                          502, "SecDocker: upstream unreachable")
                          .serialize());
      sink_.record(std::move(rec));
      return;
    }
    http::RelayedResponse info;
    auto resp_r =
        upstream_reader->read_response(req.method, forward_to_client, &info);
    if (!resp_r.ok()) {
      rec.decision = audit::DecisionLabel::Error;
      rec.reasons = {"upstream failed: " + resp_r.error().detail};
      rec.latency_micros = micros_between(arrival, steady_clock::now());
      if (!info.first_byte_seen) {
        client.send_all(http::craft_error_response(
                            502,
                            "SecDocker: upstream failed: " +
                                resp_r.error().detail)
                            .serialize());
      }
      sink_.record(std::move(rec));
      return;
    }
    rec.latency_micros = micros_between(
        arrival, info.first_byte_seen ? info.first_byte_time : arrival);
    sink_.record(std::move(rec));
    if (settings_.verbose) {
      sink_.note("exchange", std::string(to_string(outcome)));
    }
    if (info.upgrade) {
      raw_relay(client, upstream, client_reader.take_leftover(),
                upstream_reader->take_leftover());
      return;
    }
    if (info.close_after) drop_upstream();
    if (!client_keep) return;
  }
}

void run_proxy(const ProxySettings& settings, config::ProfileStore& store,
               plugins::PluginRegistry registry, audit::AuditSink& sink,
               const std::atomic<bool>& stop_flag) {
  Proxy proxy(settings, store, std::move(registry), sink);
  proxy.start();
  sink.note("listening", settings.listen_address + " -> " +
                             settings.upstream_address);
  while (!stop_flag.load()) {
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
  }
  sink.note("shutdown", "draining connections");
  proxy.stop();
}

}  // namespace secdocker::proxy
