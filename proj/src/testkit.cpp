// Copyright the SecDocker authors. SPDX-License-Identifier: Apache-2.0

#include "secdocker/testkit.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "secdocker/docker_model.hpp"

namespace secdocker::testkit {

namespace {

std::string fresh_container_id() {
  static std::atomic<uint64_t> counter{0};
  static const uint64_t seed = [] {
    std::random_device rd;
    return (static_cast<uint64_t>(rd()) << 32) ^ rd();
  }();
  std::mt19937_64 rng(seed ^ (counter.fetch_add(1) * 0x9e3779b97f4a7c15ULL));
  static const char* hex = "0123456789abcdef";
  std::string id;
  id.reserve(64);
  for (int word = 0; word < 4; ++word) {
    uint64_t v = rng();
    for (int i = 0; i < 16; ++i) {
      id.push_back(hex[v & 0xf]);
      v >>= 4;
    }
  }
  return id;
}

// The daemon sees version-prefixed paths exactly like the real one.
std::string_view strip_api_prefix(std::string_view path) {
  if (path.rfind("/v", 0) == 0) {
    const size_t slash = path.find('/', 1);
    if (slash != std::string_view::npos && slash > 1) {
      bool versionish = true;
      for (size_t i = 2; i < slash; ++i) {
        if (!std::isdigit(static_cast<unsigned char>(path[i])) &&
            path[i] != '.') {
          versionish = false;
          break;
        }
      }
      if (versionish && slash > 2) return path.substr(slash);
    }
  }
  return path;
}

bool is_start_path(std::string_view path) {
  if (path.rfind("/containers/", 0) != 0) return false;
  const std::string_view rest = path.substr(strlen("/containers/"));
  const size_t slash = rest.find('/');
  if (slash == std::string_view::npos || slash == 0) return false;
  return rest.substr(slash) == "/start";
}

}  // namespace

MockDaemon::MockDaemon(MockDaemonSettings settings)
    : settings_(std::move(settings)) {}

MockDaemon::~MockDaemon() { stop(); }

void MockDaemon::start() {
  net::ignore_sigpipe();
  auto hp = net::parse_host_port(settings_.listen_address);
  if (!hp.ok()) throw net::BindError(hp.error());
  listener_.bind_and_listen(hp.value());
  stop_.store(false);
  started_ = true;
  accept_thread_ = std::thread(&MockDaemon::accept_loop, this);
}

void MockDaemon::stop() {
  if (!started_) return;
  stop_.store(true);
  listener_.close();
  if (accept_thread_.joinable()) accept_thread_.join();
  std::unordered_map<uint64_t, std::thread> leftover;
  {
    std::lock_guard lock(mutex_);
    leftover.swap(threads_);
    finished_.clear();
  }
  for (auto& [id, thread] : leftover) {
    if (thread.joinable()) thread.join();
  }
  started_ = false;
}

std::string MockDaemon::address() const {
  return "127.0.0.1:" + std::to_string(listener_.port());
}

void MockDaemon::set_handler(Handler handler) {
  std::lock_guard lock(mutex_);
  handler_ = std::move(handler);
}

void MockDaemon::set_response_delay(std::chrono::milliseconds delay) {
  std::lock_guard lock(mutex_);
  settings_.response_delay = delay;
}

std::vector<RecordedRequest> MockDaemon::recorded() const {
  std::lock_guard lock(mutex_);
  return recorded_;
}

size_t MockDaemon::create_count() const {
  std::lock_guard lock(mutex_);
  return static_cast<size_t>(
      std::count_if(recorded_.begin(), recorded_.end(),
                    [](const RecordedRequest& r) {
                      return r.method == "POST" &&
                             strip_api_prefix(r.path) == "/containers/create";
                    }));
}

std::map<uint64_t, std::string> MockDaemon::request_bytes_by_connection()
    const {
  std::lock_guard lock(mutex_);
  std::map<uint64_t, std::string> out;
  for (const RecordedRequest& r : recorded_) {
    out[r.connection_id] += r.raw;
  }
  return out;
}

std::map<uint64_t, std::string> MockDaemon::response_bytes_by_connection()
    const {
  std::lock_guard lock(mutex_);
  return responses_;
}

void MockDaemon::accept_loop() {
  while (!stop_.load()) {
    {
      std::vector<uint64_t> done;
      std::lock_guard lock(mutex_);
      done.swap(finished_);
      for (uint64_t id : done) {
        const auto it = threads_.find(id);
        if (it != threads_.end()) {
          it->second.join();
          threads_.erase(it);
        }
      }
    }
    auto accepted = listener_.accept(250, &stop_);
    if (accepted.status == net::ReadStatus::Timeout) continue;
    if (accepted.status != net::ReadStatus::Data) break;
    std::lock_guard lock(mutex_);
    const uint64_t id = next_id_++;
    threads_.emplace(id, std::thread(&MockDaemon::serve_connection, this, id,
                                     std::move(accepted.socket)));
  }
}

std::string MockDaemon::respond_to(const http::HttpRequest& req) {
  {
    std::lock_guard lock(mutex_);
    if (handler_) {
      if (auto scripted = handler_(req)) return *scripted;
    }
  }
  const std::string_view path = strip_api_prefix(req.path);
  if (req.method == "POST" && path == "/containers/create") {
    nlohmann::json body;
    body["Id"] = fresh_container_id();
    http::HttpResponse resp;
    resp.status = 201;
    resp.reason = "Created";
    resp.headers.push_back({"Content-Type", "application/json"});
    resp.body = body.dump();
    return resp.serialize();
  }
  if (req.method == "POST" && is_start_path(path)) {
    return "HTTP/1.1 204 No Content\r\n\r\n";
  }
  if (req.method == "GET" && path == "/_ping") {
    http::HttpResponse resp;
    resp.status = 200;
    resp.headers.push_back({"Content-Type", "text/plain; charset=utf-8"});
    resp.body = "OK";
    return resp.serialize();
  }
  return http::craft_error_response(404, "not found").serialize();
}

void MockDaemon::serve_connection(uint64_t id, net::Socket socket) {
  http::SocketSource source(socket, 30000, &stop_);
  http::MessageReader reader(source);
  for (;;) {
    auto req_r = reader.read_request();
    if (!req_r.ok()) break;
    const http::HttpRequest req = req_r.take();
    {
      std::lock_guard lock(mutex_);
      recorded_.push_back(
          {id, req.raw, req.method, req.path, req.body});
    }
    std::chrono::milliseconds delay;
    {
      std::lock_guard lock(mutex_);
      delay = settings_.response_delay;
    }
    if (delay.count() > 0) std::this_thread::sleep_for(delay);
    const std::string response = respond_to(req);
    {
      std::lock_guard lock(mutex_);
      responses_[id] += response;
    }
    if (!socket.send_all(response)) break;
    if (!req.keep_alive()) break;
  }
  socket.close();
  {
    std::lock_guard lock(mutex_);
    finished_.push_back(id);
  }
  cv_.notify_all();
}

BenchmarkResult run_latency_benchmark(const std::string& target_address,
                                      size_t iterations,
                                      std::string_view create_payload) {
  BenchmarkResult result;
  auto hp = net::parse_host_port(target_address);
  if (!hp.ok()) {
    result.failures = iterations;
    result.failure_details.push_back(hp.error());
    return result;
  }

  const std::string create_request =
      "POST /containers/create HTTP/1.1\r\n"
      "Host: " + target_address + "\r\n"
      "Content-Type: application/json\r\n"
      "Content-Length: " + std::to_string(create_payload.size()) + "\r\n"
      "\r\n" + std::string(create_payload);

  for (size_t i = 0; i < iterations; ++i) {
    const auto fail = [&](const std::string& why) {
      ++result.failures;
      if (result.failure_details.size() < 10) {
        result.failure_details.push_back("iteration " + std::to_string(i) +
                                         ": " + why);
      }
    };
    const auto t0 = std::chrono::steady_clock::now();
    auto conn = net::tcp_connect(hp.value(), 5000);
    if (!conn.ok()) {
      fail(conn.error());
      continue;
    }
    net::Socket socket = conn.take();
    http::SocketSource source(socket, 10000);
    http::MessageReader reader(source);

    if (!socket.send_all(create_request)) {
      fail("create write failed");
      continue;
    }
    auto create_resp = reader.read_response("POST");
    if (!create_resp.ok()) {
      fail("create read failed: " + create_resp.error().detail);
      continue;
    }
    if (create_resp.value().status != 201) {
      fail("create returned status " +
           std::to_string(create_resp.value().status));
      continue;
    }
    const auto body = nlohmann::json::parse(create_resp.value().body,
                                            nullptr, false);
    if (body.is_discarded() || !body.contains("Id") ||
        !body["Id"].is_string()) {
      fail("create response has no Id");
      continue;
    }
    const std::string container_id = body["Id"].get<std::string>();

    const std::string start_request =
        "POST /containers/" + container_id + "/start HTTP/1.1\r\n"
        "Host: " + target_address + "\r\n"
        "Content-Length: 0\r\n"
        "\r\n";
    if (!socket.send_all(start_request)) {
      fail("start write failed");
      continue;
    }
    auto start_resp = reader.read_response("POST");
    if (!start_resp.ok()) {
      fail("start read failed: " + start_resp.error().detail);
      continue;
    }
    if (start_resp.value().status != 204) {
      fail("start returned status " +
           std::to_string(start_resp.value().status));
      continue;
    }
    const auto t1 = std::chrono::steady_clock::now();
    result.seconds.push_back(
        std::chrono::duration<double>(t1 - t0).count());
  }
  return result;
}

void write_benchmark_csv(std::ostream& out, const BenchmarkResult& result) {
  out << "iteration,seconds,ok\n";
  size_t i = 0;
  for (double s : result.seconds) {
    out << i++ << "," << s << ",1\n";
  }
  for (size_t f = 0; f < result.failures; ++f) {
    out << i++ << ",,0\n";
  }
}

LatencyStats compute_stats(const std::vector<double>& samples) {
  if (samples.empty()) {
    throw std::invalid_argument("compute_stats requires a non-empty sample");
  }
  LatencyStats stats;
  stats.sample_count = samples.size();
  const double n = static_cast<double>(samples.size());

  std::vector<double> sorted = samples;
  std::sort(sorted.begin(), sorted.end());
  stats.min = sorted.front();
  stats.max = sorted.back();

  double sum = 0;
  for (double x : sorted) sum += x;
  stats.mean = sum / n;

  double sq = 0;
  for (double x : sorted) sq += (x - stats.mean) * (x - stats.mean);
  stats.variance = sq / n;  // population variance
  stats.standard_deviation = std::sqrt(stats.variance);
  stats.standard_error = stats.standard_deviation / std::sqrt(n);

  const auto quantile = [&sorted](double q) {
    const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
    const size_t lo = static_cast<size_t>(std::floor(h));
    const size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = h - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
  };
  stats.first_quartile = quantile(0.25);
  stats.median = quantile(0.5);
  stats.third_quartile = quantile(0.75);

  // Mode over samples rounded to 3 decimals; ties resolve to the smallest.
  std::map<long long, size_t> counts;
  for (double x : sorted) {
    counts[std::llround(x * 1000.0)] += 1;
  }
  long long best_key = counts.begin()->first;
  size_t best_count = 0;
  for (const auto& [key, count] : counts) {
    if (count > best_count) {
      best_key = key;
      best_count = count;
    }
  }
  stats.mode = static_cast<double>(best_key) / 1000.0;
  return stats;
}

std::string to_string(const LatencyStats& stats) {
  std::ostringstream out;
  out.precision(6);
  out << "samples:            " << stats.sample_count << "\n"
      << "mean:               " << stats.mean << " s\n"
      << "standard error:     " << stats.standard_error << " s\n"
      << "mode:               " << stats.mode << " s\n"
      << "median:             " << stats.median << " s\n"
      << "first quartile:     " << stats.first_quartile << " s\n"
      << "third quartile:     " << stats.third_quartile << " s\n"
      << "variance:           " << stats.variance << "\n"
      << "standard deviation: " << stats.standard_deviation << " s\n"
      << "min:                " << stats.min << " s\n"
      << "max:                " << stats.max << " s\n";
  return out.str();
}

}  // namespace secdocker::testkit
