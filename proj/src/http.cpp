// Copyright the SecDocker authors. SPDX-License-Identifier: Apache-2.0

#include "secdocker/http.hpp"

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cstdlib>
#include <stdexcept>

#include <json.hpp>

namespace secdocker::http {

namespace {

constexpr size_t kReadChunk = 64 * 1024;

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(),
                    [](unsigned char x, unsigned char y) {
                      return std::tolower(x) == std::tolower(y);
                    });
}

std::string_view trim(std::string_view text) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) {
    text.remove_prefix(1);
  }
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t')) {
    text.remove_suffix(1);
  }
  return text;
}

// True when the comma-separated header value contains the given token.
bool has_token(std::string_view value, std::string_view token) {
  size_t pos = 0;
  while (pos <= value.size()) {
    const size_t comma = std::min(value.find(',', pos), value.size());
    if (iequals(trim(value.substr(pos, comma - pos)), token)) return true;
    pos = comma + 1;
  }
  return false;
}

std::optional<std::string> find_header(const std::vector<Header>& headers,
                                       std::string_view name) {
  for (const Header& h : headers) {
    if (iequals(h.name, name)) return h.value;
  }
  return std::nullopt;
}

struct Framing {
  bool chunked = false;
  bool has_length = false;
  uint64_t length = 0;
};

// Rejects ambiguous framing outright: a request carrying both Content-Length
// and Transfer-Encoding, repeated disagreeing Content-Length headers, or a
// transfer coding other than chunked.
Result<Framing, Error> resolve_framing(const std::vector<Header>& headers) {
  Framing framing;
  std::optional<std::string> content_length;
  for (const Header& h : headers) {
    if (iequals(h.name, "Transfer-Encoding")) {
      if (!iequals(trim(h.value), "chunked")) {
        return Error{ErrorKind::Malformed,
                     "unsupported Transfer-Encoding '" + h.value + "'"};
      }
      framing.chunked = true;
    } else if (iequals(h.name, "Content-Length")) {
      const std::string value(trim(h.value));
      if (content_length && *content_length != value) {
        return Error{ErrorKind::Malformed,
                     "conflicting Content-Length headers"};
      }
      content_length = value;
    }
  }
  if (framing.chunked && content_length) {
    return Error{ErrorKind::Malformed,
                 "both Content-Length and Transfer-Encoding present"};
  }
  if (content_length) {
    if (content_length->empty() ||
        !std::all_of(content_length->begin(), content_length->end(),
                     [](unsigned char c) { return std::isdigit(c); })) {
      return Error{ErrorKind::Malformed,
                   "invalid Content-Length '" + *content_length + "'"};
    }
    errno = 0;
    framing.length = std::strtoull(content_length->c_str(), nullptr, 10);
    if (errno != 0) {
      return Error{ErrorKind::Malformed,
                   "invalid Content-Length '" + *content_length + "'"};
    }
    framing.has_length = true;
  }
  return framing;
}

}  // namespace

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Malformed: return "malformed";
    case ErrorKind::TooLarge: return "too-large";
    case ErrorKind::Truncated: return "truncated";
    case ErrorKind::Closed: return "closed";
    case ErrorKind::Timeout: return "timeout";
    case ErrorKind::Stopped: return "stopped";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

std::string_view status_reason(int status) {
  switch (status) {
    case 200: return "OK";
    case 201: return "Created";
    case 204: return "No Content";
    case 304: return "Not Modified";
    case 400: return "Bad Request";
    case 403: return "Forbidden";
    case 404: return "Not Found";
    case 413: return "Payload Too Large";
    case 500: return "Internal Server Error";
    case 502: return "Bad Gateway";
    case 503: return "Service Unavailable";
    default: return "";
  }
}

std::optional<std::string> HttpRequest::header(std::string_view name) const {
  return find_header(headers, name);
}

bool HttpRequest::keep_alive() const {
  const auto connection = header("Connection");
  if (version == "HTTP/1.1") {
    return !(connection && has_token(*connection, "close"));
  }
  return connection && has_token(*connection, "keep-alive");
}

std::optional<std::string> HttpResponse::header(std::string_view name) const {
  return find_header(headers, name);
}

std::string HttpResponse::serialize() const {
  std::string out = "HTTP/1.1 " + std::to_string(status) + " " +
                    (reason.empty()
                         ? std::string(status_reason(status))
                         : reason) +
                    "\r\n";
  bool wrote_length = false;
  for (const Header& h : headers) {
    if (iequals(h.name, "Content-Length")) {
      out += h.name + ": " + std::to_string(body.size()) + "\r\n";
      wrote_length = true;
    } else {
      out += h.name + ": " + h.value + "\r\n";
    }
  }
  if (!wrote_length && status != 204 && status != 304) {
    out += "Content-Length: " + std::to_string(body.size()) + "\r\n";
  }
  out += "\r\n";
  out += body;
  return out;
}

net::ReadResult StringSource::read_some(char* buf, size_t cap) {
  if (pos_ >= data_.size()) return {net::ReadStatus::Eof, 0};
  const size_t n = std::min(cap, data_.size() - pos_);
  std::copy_n(data_.data() + pos_, n, buf);
  pos_ += n;
  return {net::ReadStatus::Data, n};
}

net::ReadResult SocketSource::read_some(char* buf, size_t cap) {
  return socket_.read_some(buf, cap, timeout_ms_, stop_);
}

Result<bool, Error> MessageReader::fill() {
  char chunk[kReadChunk];
  const net::ReadResult r = source_.read_some(chunk, sizeof(chunk));
  last_status_ = r.status;
  switch (r.status) {
    case net::ReadStatus::Data:
      buffer_.append(chunk, r.bytes);
      return true;
    case net::ReadStatus::Eof:
      return false;
    case net::ReadStatus::Timeout:
      return Error{ErrorKind::Timeout, "read timeout"};
    case net::ReadStatus::Stopped:
      return Error{ErrorKind::Stopped, "shutdown requested"};
    case net::ReadStatus::Error:
      return Error{ErrorKind::Io, "read failed"};
  }
  return Error{ErrorKind::Io, "read failed"};
}

Result<std::string, Error> MessageReader::read_line(size_t cap,
                                                    std::string* raw) {
  for (;;) {
    const size_t nl = buffer_.find('\n');
    if (nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl + 1);
      buffer_.erase(0, nl + 1);
      if (raw != nullptr) raw->append(line);
      line.pop_back();
      if (!line.empty() && line.back() == '\r') line.pop_back();
      return line;
    }
    if (buffer_.size() > cap) {
      return Error{ErrorKind::TooLarge, "line exceeds limit"};
    }
    auto more = fill();
    if (!more.ok()) return more.error();
    if (!more.value()) {
      return Error{buffer_.empty() || raw == nullptr || raw->empty()
                       ? ErrorKind::Closed
                       : ErrorKind::Truncated,
                   "connection closed mid-line"};
    }
  }
}

struct MessageReader::Head {
  std::string start_line;
  std::vector<Header> headers;
};

Result<MessageReader::Head, Error> MessageReader::read_head(std::string* raw) {
  Head head;
  size_t total = 0;
  // Ignore stray blank lines before the start line (robustness, RFC 7230
  // permits it for requests).
  for (;;) {
    auto line = read_line(kMaxHeaderBytes, raw);
    if (!line.ok()) return line.error();
    if (!line.value().empty()) {
      head.start_line = line.take();
      break;
    }
    if (raw != nullptr) raw->clear();
  }
  for (;;) {
    auto line = read_line(kMaxHeaderBytes, raw);
    if (!line.ok()) {
      if (line.error().kind == ErrorKind::Closed) {
        return Error{ErrorKind::Truncated, "connection closed mid-headers"};
      }
      return line.error();
    }
    const std::string text = line.take();
    if (text.empty()) break;
    total += text.size();
    if (total > kMaxHeaderBytes) {
      return Error{ErrorKind::TooLarge, "header section exceeds limit"};
    }
    const size_t colon = text.find(':');
    if (colon == std::string::npos || colon == 0) {
      return Error{ErrorKind::Malformed, "bad header line '" + text + "'"};
    }
    Header h;
    h.name = text.substr(0, colon);
    if (h.name.find(' ') != std::string::npos ||
        h.name.find('\t') != std::string::npos) {
      return Error{ErrorKind::Malformed, "bad header name '" + h.name + "'"};
    }
    h.value = std::string(trim(std::string_view(text).substr(colon + 1)));
    head.headers.push_back(std::move(h));
  }
  return head;
}

Result<HttpRequest, Error> MessageReader::read_request() {
  HttpRequest req;
  auto head = read_head(&req.raw);
  if (!head.ok()) return head.error();

  // Start line: METHOD SP target SP version.
  const std::string& line = head.value().start_line;
  const size_t sp1 = line.find(' ');
  const size_t sp2 = line.rfind(' ');
  if (sp1 == std::string::npos || sp2 == sp1) {
    return Error{ErrorKind::Malformed, "bad request line '" + line + "'"};
  }
  req.method = line.substr(0, sp1);
  std::string target = line.substr(sp1 + 1, sp2 - sp1 - 1);
  req.version = line.substr(sp2 + 1);
  if (req.method.empty() || target.empty() ||
      req.version.rfind("HTTP/", 0) != 0) {
    return Error{ErrorKind::Malformed, "bad request line '" + line + "'"};
  }
  // Absolute-form targets carry scheme://authority before the path.
  if (target.rfind("http://", 0) == 0 || target.rfind("https://", 0) == 0) {
    const size_t path_start = target.find('/', target.find("//") + 2);
    target = path_start == std::string::npos ? "/" : target.substr(path_start);
  }
  const size_t qmark = target.find('?');
  req.path = target.substr(0, qmark);
  if (qmark != std::string::npos) req.query = target.substr(qmark + 1);
  req.headers = std::move(head.value().headers);

  auto framing = resolve_framing(req.headers);
  if (!framing.ok()) return framing.error();

  if (framing.value().chunked) {
    req.chunked = true;
    for (;;) {
      auto size_line = read_line(kMaxHeaderBytes, &req.raw);
      if (!size_line.ok()) {
        Error e = size_line.error();
        if (e.kind == ErrorKind::Closed) e.kind = ErrorKind::Truncated;
        return e;
      }
      const std::string text = size_line.take();
      const std::string_view digits =
          std::string_view(text).substr(0, std::min(text.find(';'),
                                                    text.size()));
      if (digits.empty() ||
          !std::all_of(digits.begin(), digits.end(), [](unsigned char c) {
            return std::isxdigit(c);
          })) {
        return Error{ErrorKind::Malformed,
                     "bad chunk size line '" + text + "'"};
      }
      const uint64_t size = std::stoull(std::string(digits), nullptr, 16);
      if (size == 0) {
        // Trailer section, up to the final blank line.
        for (;;) {
          auto trailer = read_line(kMaxHeaderBytes, &req.raw);
          if (!trailer.ok()) {
            Error e = trailer.error();
            if (e.kind == ErrorKind::Closed) e.kind = ErrorKind::Truncated;
            return e;
          }
          if (trailer.value().empty()) break;
        }
        break;
      }
      if (req.body.size() + size > kMaxBodyBytes) {
        return Error{ErrorKind::TooLarge, "body exceeds 16 MiB cap"};
      }
      while (buffer_.size() < size + 2) {
        auto more = fill();
        if (!more.ok()) return more.error();
        if (!more.value()) {
          return Error{ErrorKind::Truncated, "connection closed mid-chunk"};
        }
      }
      if (buffer_[size] != '\r' || buffer_[size + 1] != '\n') {
        return Error{ErrorKind::Malformed, "chunk not CRLF-terminated"};
      }
      req.body.append(buffer_, 0, size);
      req.raw.append(buffer_, 0, size + 2);
      buffer_.erase(0, size + 2);
    }
  } else if (framing.value().has_length) {
    const uint64_t length = framing.value().length;
    if (length > kMaxBodyBytes) {
      return Error{ErrorKind::TooLarge, "body exceeds 16 MiB cap"};
    }
    while (buffer_.size() < length) {
      auto more = fill();
      if (!more.ok()) return more.error();
      if (!more.value()) {
        return Error{ErrorKind::Truncated, "connection closed mid-body"};
      }
    }
    req.body.assign(buffer_, 0, length);
    req.raw.append(buffer_, 0, length);
    buffer_.erase(0, length);
  }
  return req;
}

Result<HttpResponse, Error> MessageReader::read_response(
    const std::string& request_method) {
  return read_response(request_method, nullptr, nullptr);
}

Result<HttpResponse, Error> MessageReader::read_response(
    const std::string& request_method, const ForwardFn& forward,
    RelayedResponse* relay_info) {
  const auto emit = [&](std::string_view bytes) -> bool {
    if (relay_info != nullptr && !relay_info->first_byte_seen &&
        !bytes.empty()) {
      relay_info->first_byte_seen = true;
      relay_info->first_byte_time = std::chrono::steady_clock::now();
    }
    return forward == nullptr || forward(bytes);
  };

  HttpResponse resp;
  for (;;) {  // loop past interim 1xx responses
    std::string raw_head;
    auto head = read_head(&raw_head);
    if (!head.ok()) return head.error();
    const std::string& line = head.value().start_line;
    const size_t sp1 = line.find(' ');
    if (line.rfind("HTTP/", 0) != 0 || sp1 == std::string::npos) {
      return Error{ErrorKind::Malformed, "bad status line '" + line + "'"};
    }
    const size_t sp2 = line.find(' ', sp1 + 1);
    const std::string code = line.substr(sp1 + 1, sp2 - sp1 - 1);
    if (code.size() != 3 ||
        !std::all_of(code.begin(), code.end(), [](unsigned char c) {
          return std::isdigit(c);
        })) {
      return Error{ErrorKind::Malformed, "bad status code '" + code + "'"};
    }
    resp.status = std::stoi(code);
    resp.reason = sp2 == std::string::npos ? "" : line.substr(sp2 + 1);
    resp.headers = std::move(head.value().headers);

    if (!emit(raw_head)) return Error{ErrorKind::Io, "downstream write failed"};

    if (resp.status == 101) {
      if (relay_info != nullptr) {
        relay_info->status = resp.status;
        relay_info->upgrade = true;
      }
      return resp;
    }
    if (resp.status >= 100 && resp.status < 200) {
      resp.headers.clear();
      continue;  // interim response; the real one follows
    }
    break;
  }

  bool close_delimited = false;
  bool no_body = request_method == "HEAD" || resp.status == 204 ||
                 resp.status == 304;
  auto framing = resolve_framing(resp.headers);
  if (!framing.ok()) return framing.error();

  uint64_t body_bytes = 0;
  if (!no_body && framing.value().chunked) {
    for (;;) {
      std::string raw_line;
      auto size_line = read_line(kMaxHeaderBytes, &raw_line);
      if (!size_line.ok()) {
        Error e = size_line.error();
        if (e.kind == ErrorKind::Closed) e.kind = ErrorKind::Truncated;
        return e;
      }
      const std::string text = size_line.take();
      const std::string_view digits =
          std::string_view(text).substr(0, std::min(text.find(';'),
                                                    text.size()));
      if (digits.empty() ||
          !std::all_of(digits.begin(), digits.end(), [](unsigned char c) {
            return std::isxdigit(c);
          })) {
        return Error{ErrorKind::Malformed,
                     "bad chunk size line '" + text + "'"};
      }
      const uint64_t size = std::stoull(std::string(digits), nullptr, 16);
      if (!emit(raw_line)) {
        return Error{ErrorKind::Io, "downstream write failed"};
      }
      body_bytes += raw_line.size();
      if (size == 0) {
        for (;;) {
          std::string raw_trailer;
          auto trailer = read_line(kMaxHeaderBytes, &raw_trailer);
          if (!trailer.ok()) {
            Error e = trailer.error();
            if (e.kind == ErrorKind::Closed) e.kind = ErrorKind::Truncated;
            return e;
          }
          if (!emit(raw_trailer)) {
            return Error{ErrorKind::Io, "downstream write failed"};
          }
          body_bytes += raw_trailer.size();
          if (trailer.value().empty()) break;
        }
        break;
      }
      // Stream the chunk payload without buffering it whole.
      uint64_t remaining = size;
      while (remaining > 0) {
        if (buffer_.empty()) {
          auto more = fill();
          if (!more.ok()) return more.error();
          if (!more.value()) {
            return Error{ErrorKind::Truncated, "connection closed mid-chunk"};
          }
        }
        const size_t take = static_cast<size_t>(
            std::min<uint64_t>(remaining, buffer_.size()));
        if (forward == nullptr) {
          if (resp.body.size() + take > kMaxBodyBytes) {
            return Error{ErrorKind::TooLarge, "body exceeds 16 MiB cap"};
          }
          resp.body.append(buffer_, 0, take);
        }
        if (!emit(std::string_view(buffer_).substr(0, take))) {
          return Error{ErrorKind::Io, "downstream write failed"};
        }
        buffer_.erase(0, take);
        remaining -= take;
        body_bytes += take;
      }
      while (buffer_.size() < 2) {
        auto more = fill();
        if (!more.ok()) return more.error();
        if (!more.value()) {
          return Error{ErrorKind::Truncated, "connection closed mid-chunk"};
        }
      }
      if (buffer_[0] != '\r' || buffer_[1] != '\n') {
        return Error{ErrorKind::Malformed, "chunk not CRLF-terminated"};
      }
      if (!emit("\r\n")) {
        return Error{ErrorKind::Io, "downstream write failed"};
      }
      buffer_.erase(0, 2);
      body_bytes += 2;
    }
  } else if (!no_body && framing.value().has_length) {
    uint64_t remaining = framing.value().length;
    if (forward == nullptr && remaining > kMaxBodyBytes) {
      return Error{ErrorKind::TooLarge, "body exceeds 16 MiB cap"};
    }
    while (remaining > 0) {
      if (buffer_.empty()) {
        auto more = fill();
        if (!more.ok()) return more.error();
        if (!more.value()) {
          return Error{ErrorKind::Truncated, "connection closed mid-body"};
        }
      }
      const size_t take = static_cast<size_t>(
          std::min<uint64_t>(remaining, buffer_.size()));
      if (forward == nullptr) resp.body.append(buffer_, 0, take);
      if (!emit(std::string_view(buffer_).substr(0, take))) {
        return Error{ErrorKind::Io, "downstream write failed"};
      }
      buffer_.erase(0, take);
      remaining -= take;
      body_bytes += take;
    }
  } else if (!no_body) {
    // No framing headers: the body runs until the server closes.
    close_delimited = true;
    for (;;) {
      if (buffer_.empty()) {
        auto more = fill();
        if (!more.ok()) return more.error();
        if (!more.value()) break;
      }
      if (forward == nullptr) {
        if (resp.body.size() + buffer_.size() > kMaxBodyBytes) {
          return Error{ErrorKind::TooLarge, "body exceeds 16 MiB cap"};
        }
        resp.body.append(buffer_);
      }
      if (!emit(buffer_)) {
        return Error{ErrorKind::Io, "downstream write failed"};
      }
      body_bytes += buffer_.size();
      buffer_.clear();
    }
  }

  if (relay_info != nullptr) {
    relay_info->status = resp.status;
    relay_info->body_bytes = body_bytes;
    const auto connection = resp.header("Connection");
    relay_info->close_after =
        close_delimited || (connection && has_token(*connection, "close"));
  }
  return resp;
}

std::string MessageReader::take_leftover() {
  std::string out;
  out.swap(buffer_);
  return out;
}

HttpResponse craft_denial_response(
    const std::vector<policy::Violation>& violations) {
  if (violations.empty()) {
    throw std::logic_error("craft_denial_response requires violations");
  }
  std::vector<policy::Violation> ordered = violations;
  std::sort(ordered.begin(), ordered.end());
  std::string listing;
  for (const policy::Violation& v : ordered) {
    if (!listing.empty()) listing += ", ";
    listing += describe(v);
  }
  return craft_error_response(403,
                              "SecDocker: forbidden option(s): " + listing);
}

HttpResponse craft_error_response(int status, std::string_view message) {
  HttpResponse resp;
  resp.status = status;
  resp.reason = std::string(status_reason(status));
  resp.headers.push_back({"Content-Type", "application/json"});
  nlohmann::json body;
  body["message"] = std::string(message);
  resp.body = body.dump();
  return resp;
}

std::string rewrite_request(const HttpRequest& request,
                            std::string_view new_body) {
  std::string out = request.method + " " + request.path;
  if (!request.query.empty()) out += "?" + request.query;
  out += " " + request.version + "\r\n";
  bool wrote_length = false;
  for (const Header& h : request.headers) {
    if (iequals(h.name, "Transfer-Encoding")) continue;
    if (iequals(h.name, "Content-Length")) {
      if (wrote_length) continue;
      out += h.name + ": " + std::to_string(new_body.size()) + "\r\n";
      wrote_length = true;
      continue;
    }
    out += h.name + ": " + h.value + "\r\n";
  }
  if (!wrote_length) {
    out += "Content-Length: " + std::to_string(new_body.size()) + "\r\n";
  }
  out += "\r\n";
  out += new_body;
  return out;
}

}  // namespace secdocker::http
