// Copyright the SecDocker authors. SPDX-License-Identifier: Apache-2.0

#ifndef SECDOCKER_HTTP_HPP_
#define SECDOCKER_HTTP_HPP_

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "secdocker/net.hpp"
#include "secdocker/policy.hpp"
#include "secdocker/result.hpp"

namespace secdocker::http {

inline constexpr size_t kMaxBodyBytes = 16 * 1024 * 1024;
inline constexpr size_t kMaxHeaderBytes = 1 * 1024 * 1024;

enum class ErrorKind {
  Malformed,  // bad syntax or inconsistent framing
  TooLarge,   // body or header section above the cap
  Truncated,  // peer closed mid-message
  Closed,     // clean close at a message boundary
  Timeout,    // no bytes within the read timeout
  Stopped,    // shutdown requested
  Io,         // transport error
};

struct Error {
  ErrorKind kind;
  std::string detail;
};

std::string_view to_string(ErrorKind kind);

struct Header {
  std::string name;   // original casing
  std::string value;

  bool operator==(const Header&) const = default;
};

struct HttpRequest {
  std::string method;
  std::string path;     // without the query string
  std::string query;    // without the leading '?'
  std::string version;  // "HTTP/1.1"
  std::vector<Header> headers;  // wire order
  std::string body;     // de-chunked
  std::string raw;      // exact bytes consumed from the wire
  bool chunked = false;

  std::optional<std::string> header(std::string_view name) const;
  bool keep_alive() const;
};

struct HttpResponse {
  int status = 200;
  std::string reason = "OK";
  std::vector<Header> headers;
  std::string body;

  std::optional<std::string> header(std::string_view name) const;
  // Emits the status line, headers and body with a correct Content-Length.
  std::string serialize() const;
};

// Incoming byte stream abstraction; lets tests drive the parser from strings.
class ByteSource {
 public:
  virtual ~ByteSource() = default;
  virtual net::ReadResult read_some(char* buf, size_t cap) = 0;
};

class StringSource : public ByteSource {
 public:
  explicit StringSource(std::string data) : data_(std::move(data)) {}
  net::ReadResult read_some(char* buf, size_t cap) override;

 private:
  std::string data_;
  size_t pos_ = 0;
};

class SocketSource : public ByteSource {
 public:
  SocketSource(net::Socket& socket, int timeout_ms,
               const std::atomic<bool>* stop = nullptr)
      : socket_(socket), timeout_ms_(timeout_ms), stop_(stop) {}
  net::ReadResult read_some(char* buf, size_t cap) override;

 private:
  net::Socket& socket_;
  int timeout_ms_;
  const std::atomic<bool>* stop_;
};

// Sink for verbatim relay; returns false when the downstream write fails.
using ForwardFn = std::function<bool(std::string_view)>;

struct RelayedResponse {
  int status = 0;
  bool upgrade = false;      // 101: switch to a raw bidirectional stream
  bool close_after = false;  // Connection: close or close-delimited body
  uint64_t body_bytes = 0;   // framed body bytes relayed (wire size)
  bool first_byte_seen = false;
  std::chrono::steady_clock::time_point first_byte_time;
};

// One reader per connection side; buffers leftovers between keep-alive
// messages.
class MessageReader {
 public:
  explicit MessageReader(ByteSource& source) : source_(source) {}

  // Reads one full request: Content-Length or chunked framing, 16 MiB body
  // cap. Closed is returned for a clean EOF before the first byte of a
  // message.
  Result<HttpRequest, Error> read_request();

  // Reads one full response for the given request method, optionally
  // forwarding every consumed byte verbatim (head and body framing
  // untouched). Decoded body accumulation is skipped when forward is set, so
  // relayed responses are not size-capped.
  Result<HttpResponse, Error> read_response(const std::string& request_method,
                                            const ForwardFn& forward,
                                            RelayedResponse* relay_info);
  Result<HttpResponse, Error> read_response(const std::string& request_method);

  // Buffered-but-unconsumed bytes, handed over when a connection upgrades to
  // a raw stream.
  std::string take_leftover();

 private:
  struct Head;
  Result<std::string, Error> read_line(size_t cap, std::string* raw);
  Result<bool, Error> fill();  // false on EOF
  Result<Head, Error> read_head(std::string* raw);

  ByteSource& source_;
  std::string buffer_;
  net::ReadStatus last_status_ = net::ReadStatus::Data;
};

// 403 with a Docker-style JSON error body listing every violation,
// comma-separated in rule-kind order. Throws std::logic_error on an empty
// list.
HttpResponse craft_denial_response(
    const std::vector<policy::Violation>& violations);

// Docker-style {"message": ...} error with the given status.
HttpResponse craft_error_response(int status, std::string_view message);

// Re-emits the request with the new body: Content-Length recomputed, chunked
// encoding removed, all other headers byte-preserved in order.
std::string rewrite_request(const HttpRequest& request,
                            std::string_view new_body);

std::string_view status_reason(int status);

}  // namespace secdocker::http

#endif  // SECDOCKER_HTTP_HPP_
