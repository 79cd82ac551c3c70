// Copyright the SecDocker authors. SPDX-License-Identifier: Apache-2.0

#ifndef SECDOCKER_TESTKIT_HPP_
#define SECDOCKER_TESTKIT_HPP_

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "secdocker/http.hpp"
#include "secdocker/net.hpp"

namespace secdocker::testkit {

struct RecordedRequest {
  uint64_t connection_id = 0;
  std::string raw;  // exact bytes as received
  std::string method;
  std::string path;
  std::string body;  // de-chunked
};

struct MockDaemonSettings {
  std::string listen_address = "127.0.0.1:0";
  std::chrono::milliseconds response_delay{0};
};

// Recording stand-in for the Docker daemon. Scripted answers:
//   POST /containers/create        -> 201 {"Id": "<64 hex chars>"}
//   POST /containers/{id}/start    -> 204
//   GET  /_ping                    -> 200 "OK"
//   anything else                  -> 404 {"message":"not found"}
// Every request is recorded byte-faithfully together with the raw response
// bytes sent back.
class MockDaemon {
 public:
  // Returns serialized response bytes, or nullopt to fall through to the
  // scripted defaults.
  using Handler =
      std::function<std::optional<std::string>(const http::HttpRequest&)>;

  explicit MockDaemon(MockDaemonSettings settings = {});
  ~MockDaemon();

  void start();  // throws net::BindError
  void stop();
  uint16_t port() const { return listener_.port(); }
  std::string address() const;

  void set_handler(Handler handler);
  void set_response_delay(std::chrono::milliseconds delay);

  std::vector<RecordedRequest> recorded() const;
  size_t create_count() const;
  // Per-connection byte streams for byte-exact transparency checks.
  std::map<uint64_t, std::string> request_bytes_by_connection() const;
  std::map<uint64_t, std::string> response_bytes_by_connection() const;

 private:
  void accept_loop();
  void serve_connection(uint64_t id, net::Socket socket);
  std::string respond_to(const http::HttpRequest& req);

  MockDaemonSettings settings_;
  net::Listener listener_;
  std::thread accept_thread_;
  std::atomic<bool> stop_{false};
  bool started_ = false;

  mutable std::mutex mutex_;
  std::condition_variable cv_;
  Handler handler_;
  std::vector<RecordedRequest> recorded_;
  std::map<uint64_t, std::string> responses_;
  std::unordered_map<uint64_t, std::thread> threads_;
  std::vector<uint64_t> finished_;
  uint64_t next_id_ = 1;
  uint64_t id_counter_ = 0;
};

struct BenchmarkResult {
  std::vector<double> seconds;  // wall-clock per successful exchange
  size_t failures = 0;
  std::vector<std::string> failure_details;
};

// Issues `iterations` sequential create+start exchanges against the target,
// one fresh connection per iteration. Failed iterations are excluded from
// the samples and reported separately.
BenchmarkResult run_latency_benchmark(const std::string& target_address,
                                      size_t iterations,
                                      std::string_view create_payload);

// CSV columns: iteration, seconds, ok.
void write_benchmark_csv(std::ostream& out, const BenchmarkResult& result);

struct LatencyStats {
  double mean = 0;
  double standard_error = 0;  // standard_deviation / sqrt(n)
  double mode = 0;            // most frequent value at 3 decimals, ties low
  double median = 0;
  double first_quartile = 0;
  double third_quartile = 0;
  double variance = 0;  // population variance
  double standard_deviation = 0;
  double min = 0;
  double max = 0;
  size_t sample_count = 0;
};

// Quartiles use inclusive linear interpolation over the sorted sample.
// Throws std::invalid_argument on an empty input.
LatencyStats compute_stats(const std::vector<double>& samples);

std::string to_string(const LatencyStats& stats);

}  // namespace secdocker::testkit

#endif  // SECDOCKER_TESTKIT_HPP_
