// Copyright the SecDocker authors. SPDX-License-Identifier: Apache-2.0

#ifndef SECDOCKER_AUDIT_HPP_
#define SECDOCKER_AUDIT_HPP_

#include <chrono>
#include <cstdint>
#include <fstream>
#include <iosfwd>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace secdocker::audit {

enum class DecisionLabel { Allowed, Mutated, Denied, Error };
std::string_view to_string(DecisionLabel label);

// One line of accounting per intercepted request.
struct AuditRecord {
  std::chrono::system_clock::time_point timestamp =
      std::chrono::system_clock::now();
  std::string client_address;
  std::string method;
  std::string path;
  std::optional<std::string> image;
  DecisionLabel decision = DecisionLabel::Allowed;
  std::vector<std::string> reasons;  // violation kinds, mutation names, or
                                     // error detail; empty iff allowed
  std::vector<std::string> plugin_verdicts;
  int64_t latency_micros = 0;
};

enum class LogFormat { Human, JsonLines };

// "2026-01-02T15:04:05.123Z"
std::string format_timestamp_utc_ms(std::chrono::system_clock::time_point t);

std::string to_json_line(const AuditRecord& record);
std::string to_human_line(const AuditRecord& record);

// Serialized append-only sink writing every record to the console stream and,
// when configured, a log file. A destination failure is reported once and
// never blocks traffic.
class AuditSink {
 public:
  AuditSink(LogFormat format, std::ostream* console,
            const std::string& file_path = "");

  // False when any destination failed (the sink keeps serving the others).
  bool record(AuditRecord rec);

  // Operational event, kept distinct from per-request records.
  void note(std::string_view event, std::string_view detail);

  bool degraded() const;
  LogFormat format() const { return format_; }

 private:
  bool write_line(const std::string& line);

  LogFormat format_;
  std::ostream* console_;
  std::string file_path_;
  mutable std::mutex mutex_;
  std::ofstream file_;
  bool file_failed_ = false;
  bool file_failure_reported_ = false;
  std::chrono::system_clock::time_point last_timestamp_{};
};

}  // namespace secdocker::audit

#endif  // SECDOCKER_AUDIT_HPP_
