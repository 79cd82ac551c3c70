// Copyright the SecDocker authors. SPDX-License-Identifier: Apache-2.0

#include "secdocker/audit.hpp"

#include <algorithm>
#include <cstdio>
#include <ctime>
#include <ostream>

#include <json.hpp>

namespace secdocker::audit {

std::string_view to_string(DecisionLabel label) {
  switch (label) {
    case DecisionLabel::Allowed: return "allowed";
    case DecisionLabel::Mutated: return "mutated";
    case DecisionLabel::Denied: return "denied";
    case DecisionLabel::Error: return "error";
  }
  return "unknown";
}

std::string format_timestamp_utc_ms(std::chrono::system_clock::time_point t) {
  const auto since_epoch = t.time_since_epoch();
  const auto secs =
      std::chrono::duration_cast<std::chrono::seconds>(since_epoch);
  const auto millis =
      std::chrono::duration_cast<std::chrono::milliseconds>(since_epoch) -
      std::chrono::duration_cast<std::chrono::milliseconds>(secs);
  const std::time_t tt = secs.count();
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ",
                tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday, tm.tm_hour,
                tm.tm_min, tm.tm_sec, static_cast<int>(millis.count()));
  return buf;
}

std::string to_json_line(const AuditRecord& record) {
  nlohmann::ordered_json line;
  line["timestamp"] = format_timestamp_utc_ms(record.timestamp);
  line["client_address"] = record.client_address;
  line["method"] = record.method;
  line["path"] = record.path;
  if (record.image) line["image"] = *record.image;
  line["decision"] = std::string(to_string(record.decision));
  line["reasons"] = record.reasons;
  line["plugin_verdicts"] = record.plugin_verdicts;
  line["latency_micros"] = record.latency_micros;
  return line.dump();
}

std::string to_human_line(const AuditRecord& record) {
  std::string out = format_timestamp_utc_ms(record.timestamp);
  out += " " + record.client_address;
  out += " " + record.method + " " + record.path;
  if (record.image) out += " image=" + *record.image;
  out += " decision=";
  out += to_string(record.decision);
  out += " latency=" + std::to_string(record.latency_micros) + "us";
  if (!record.reasons.empty()) {
    out += " reasons=[";
    for (size_t i = 0; i < record.reasons.size(); ++i) {
      if (i > 0) out += ", ";
      out += record.reasons[i];
    }
    out += "]";
  }
  if (!record.plugin_verdicts.empty()) {
    out += " plugins=[";
    for (size_t i = 0; i < record.plugin_verdicts.size(); ++i) {
      if (i > 0) out += ", ";
      out += record.plugin_verdicts[i];
    }
    out += "]";
  }
  return out;
}

AuditSink::AuditSink(LogFormat format, std::ostream* console,
                     const std::string& file_path)
    : format_(format), console_(console), file_path_(file_path) {
  if (!file_path_.empty()) {
    file_.open(file_path_, std::ios::app);
    if (!file_) {
      file_failed_ = true;
      if (console_ != nullptr) {
        *console_ << "secdocker: audit log file unwritable: " << file_path_
                  << "\n";
        console_->flush();
      }
      file_failure_reported_ = true;
    }
  }
}

bool AuditSink::write_line(const std::string& line) {
  bool all_ok = true;
  if (console_ != nullptr) {
    *console_ << line << "\n";
    console_->flush();
    if (!console_->good()) all_ok = false;
  }
  if (!file_path_.empty()) {
    if (file_failed_) {
      all_ok = false;
    } else {
      file_ << line << "\n";
      file_.flush();
      if (!file_) {
        file_failed_ = true;
        all_ok = false;
        if (!file_failure_reported_ && console_ != nullptr) {
          *console_ << "secdocker: audit log file write failed: "
                    << file_path_ << "\n";
          console_->flush();
          file_failure_reported_ = true;
        }
      }
    }
  }
  return all_ok;
}

bool AuditSink::record(AuditRecord rec) {
  std::lock_guard lock(mutex_);
  // Timestamps are non-decreasing within one sink even when handler clocks
  // raced.
  rec.timestamp = std::max(rec.timestamp, last_timestamp_);
  last_timestamp_ = rec.timestamp;
  const std::string line = format_ == LogFormat::JsonLines
                               ? to_json_line(rec)
                               : to_human_line(rec);
  return write_line(line);
}

void AuditSink::note(std::string_view event, std::string_view detail) {
  std::lock_guard lock(mutex_);
  const auto now = std::max(std::chrono::system_clock::now(),
                            last_timestamp_);
  last_timestamp_ = now;
  std::string line;
  if (format_ == LogFormat::JsonLines) {
    nlohmann::ordered_json obj;
    obj["timestamp"] = format_timestamp_utc_ms(now);
    obj["event"] = std::string(event);
    obj["detail"] = std::string(detail);
    line = obj.dump();
  } else {
    line = format_timestamp_utc_ms(now) + " event=" + std::string(event) +
           " detail=" + std::string(detail);
  }
  write_line(line);
}

bool AuditSink::degraded() const {
  std::lock_guard lock(mutex_);
  return file_failed_;
}

}  // namespace secdocker::audit
