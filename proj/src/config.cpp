// Copyright the SecDocker authors. SPDX-License-Identifier: Apache-2.0

#include "secdocker/config.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace secdocker::config {

namespace {

using policy::SecurityProfile;

ConfigError schema_error(std::string detail) {
  return {ConfigErrorKind::SchemaViolation, std::move(detail), std::nullopt,
          std::nullopt};
}

Result<std::vector<std::string>, ConfigError> string_list(
    const YAML::Node& node, const std::string& key) {
  std::vector<std::string> out;
  if (!node.IsSequence()) {
    return schema_error(key + " must be a list of strings");
  }
  for (const YAML::Node& item : node) {
    if (!item.IsScalar()) {
      return schema_error(key + " entries must be strings");
    }
    std::string value = item.as<std::string>();
    if (value.empty()) {
      return schema_error(key + " entries must be non-empty");
    }
    out.push_back(std::move(value));
  }
  return out;
}

Result<std::monostate, ConfigError> load_docker_section(
    const YAML::Node& node, policy::OptionRules& rules) {
  if (node.IsNull()) return std::monostate{};
  if (!node.IsMap()) return schema_error("docker must be a mapping");
  for (const auto& item : node) {
    const std::string key = item.first.as<std::string>();
    const YAML::Node& value = item.second;
    if (key == "ports") {
      if (!value.IsSequence()) {
        return schema_error("docker.ports must be a list of port numbers");
      }
      for (const YAML::Node& port : value) {
        long long n = 0;
        try {
          n = port.as<long long>();
        } catch (const YAML::Exception&) {
          return schema_error("docker.ports entries must be integers");
        }
        if (n < 1 || n > 65535) {
          return schema_error("docker.ports entry out of range: " +
                              port.as<std::string>());
        }
        rules.ports.insert(static_cast<uint16_t>(n));
      }
    } else if (key == "users") {
      auto list = string_list(value, "docker.users");
      if (!list.ok()) return list.error();
      rules.users.insert(list.value().begin(), list.value().end());
    } else if (key == "mounts") {
      auto list = string_list(value, "docker.mounts");
      if (!list.ok()) return list.error();
      rules.mounts.insert(list.value().begin(), list.value().end());
    } else if (key == "environment") {
      auto list = string_list(value, "docker.environment");
      if (!list.ok()) return list.error();
      for (const std::string& entry : list.value()) {
        if (entry.front() == '=') {
          return schema_error(
              "docker.environment entries must be KEY or KEY=VAL");
        }
        rules.environment.insert(entry);
      }
    } else if (key == "capabilities") {
      auto list = string_list(value, "docker.capabilities");
      if (!list.ok()) return list.error();
      for (const std::string& entry : list.value()) {
        const std::string normalized = docker::normalize_capability(entry);
        if (normalized.empty()) {
          return schema_error("docker.capabilities entries must be non-empty");
        }
        rules.capabilities.insert(normalized);
      }
    } else if (key == "images") {
      auto list = string_list(value, "docker.images");
      if (!list.ok()) return list.error();
      rules.images.insert(list.value().begin(), list.value().end());
    } else if (key == "privileged") {
      try {
        rules.privileged = value.as<bool>();
      } catch (const YAML::Exception&) {
        return schema_error("docker.privileged must be a boolean");
      }
    } else {
      return schema_error("unknown key 'docker." + key + "'");
    }
  }
  return std::monostate{};
}

Result<std::monostate, ConfigError> load_restrictions_section(
    const YAML::Node& node, policy::Restrictions& restrictions) {
  if (node.IsNull()) return std::monostate{};
  if (!node.IsMap()) return schema_error("restrictions must be a mapping");
  for (const auto& item : node) {
    const std::string key = item.first.as<std::string>();
    const YAML::Node& value = item.second;
    if (key == "memory") {
      if (!value.IsScalar()) {
        return schema_error("restrictions.memory must be a size string");
      }
      auto bytes = parse_memory_size(value.as<std::string>());
      if (!bytes.ok()) {
        return schema_error("restrictions.memory: " + bytes.error());
      }
      restrictions.memory_bytes = bytes.value();
    } else if (key == "cpu") {
      double cpus = 0;
      try {
        cpus = value.as<double>();
      } catch (const YAML::Exception&) {
        return schema_error("restrictions.cpu must be a number");
      }
      if (!(cpus > 0)) {
        return schema_error("restrictions.cpu must be positive");
      }
      const long long nanos = std::llround(cpus * 1e9);
      if (nanos < 1) {
        return schema_error("restrictions.cpu too small");
      }
      restrictions.nano_cpus = nanos;
    } else if (key == "user") {
      if (!value.IsScalar() || value.as<std::string>().empty()) {
        return schema_error("restrictions.user must be a non-empty string");
      }
      restrictions.user = value.as<std::string>();
    } else if (key == "environment") {
      auto list = string_list(value, "restrictions.environment");
      if (!list.ok()) return list.error();
      for (const std::string& entry : list.value()) {
        const size_t eq = entry.find('=');
        if (eq == std::string::npos || eq == 0) {
          return schema_error(
              "restrictions.environment entries must be KEY=VAL");
        }
        restrictions.environment.push_back(entry);
      }
    } else {
      return schema_error("unknown key 'restrictions." + key + "'");
    }
  }
  return std::monostate{};
}

}  // namespace

std::string describe(const ConfigError& error) {
  std::string out;
  switch (error.kind) {
    case ConfigErrorKind::IoError: out = "io error: "; break;
    case ConfigErrorKind::YamlSyntax: out = "yaml syntax error: "; break;
    case ConfigErrorKind::SchemaViolation: out = "schema violation: "; break;
  }
  out += error.detail;
  if (error.line) {
    out += " (line " + std::to_string(*error.line);
    if (error.column) out += ", column " + std::to_string(*error.column);
    out += ")";
  }
  return out;
}

Result<int64_t, std::string> parse_memory_size(std::string_view text) {
  std::string_view s = text;
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  if (s.empty()) return std::string("empty size");
  int64_t multiplier = 1;
  const char suffix = static_cast<char>(
      std::tolower(static_cast<unsigned char>(s.back())));
  if (suffix == 'b' || suffix == 'k' || suffix == 'm' || suffix == 'g') {
    switch (suffix) {
      case 'k': multiplier = 1024; break;
      case 'm': multiplier = 1024 * 1024; break;
      case 'g': multiplier = 1024 * 1024 * 1024; break;
      default: break;
    }
    s.remove_suffix(1);
  }
  if (s.empty() || !std::all_of(s.begin(), s.end(), [](unsigned char c) {
        return std::isdigit(c);
      })) {
    return std::string("invalid size '" + std::string(text) + "'");
  }
  errno = 0;
  const unsigned long long raw = std::strtoull(std::string(s).c_str(),
                                               nullptr, 10);
  if (errno != 0 ||
      raw > static_cast<unsigned long long>(INT64_MAX / multiplier)) {
    return std::string("size out of range '" + std::string(text) + "'");
  }
  const int64_t bytes = static_cast<int64_t>(raw) * multiplier;
  if (bytes <= 0) {
    return std::string("size must be strictly positive");
  }
  return bytes;
}

Result<policy::SecurityProfile, ConfigError> load_profile(
    std::string_view yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(yaml_text));
  } catch (const YAML::ParserException& e) {
    return ConfigError{ConfigErrorKind::YamlSyntax, e.msg,
                       e.mark.line >= 0 ? std::optional<int>(e.mark.line + 1)
                                        : std::nullopt,
                       e.mark.column >= 0
                           ? std::optional<int>(e.mark.column + 1)
                           : std::nullopt};
  } catch (const YAML::Exception& e) {
    return ConfigError{ConfigErrorKind::YamlSyntax, e.what(), std::nullopt,
                       std::nullopt};
  }

  SecurityProfile profile;
  if (root.IsNull() || !root.IsDefined()) return profile;
  if (!root.IsMap()) {
    return schema_error("top-level document must be a mapping");
  }
  try {
    for (const auto& item : root) {
      const std::string key = item.first.as<std::string>();
      if (key == "docker") {
        auto rc = load_docker_section(item.second, profile.option_rules);
        if (!rc.ok()) return rc.error();
      } else if (key == "restrictions") {
        auto rc = load_restrictions_section(item.second,
                                            profile.restrictions);
        if (!rc.ok()) return rc.error();
      } else {
        return schema_error("unknown key '" + key + "'");
      }
    }
  } catch (const YAML::Exception& e) {
    return ConfigError{ConfigErrorKind::YamlSyntax, e.what(), std::nullopt,
                       std::nullopt};
  }
  return profile;
}

Result<policy::SecurityProfile, ConfigError> load_profile_file(
    const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    return ConfigError{ConfigErrorKind::IoError,
                       "cannot open '" + path + "'", std::nullopt,
                       std::nullopt};
  }
  std::ostringstream text;
  text << in.rdbuf();
  if (in.bad()) {
    return ConfigError{ConfigErrorKind::IoError,
                       "cannot read '" + path + "'", std::nullopt,
                       std::nullopt};
  }
  return load_profile(text.str());
}

std::string render_profile(const policy::SecurityProfile& profile) {
  YAML::Emitter out;
  out.SetDoublePrecision(15);
  const policy::OptionRules& rules = profile.option_rules;
  const policy::Restrictions& restrictions = profile.restrictions;

  const bool has_rules = !rules.ports.empty() || !rules.users.empty() ||
                         !rules.mounts.empty() || !rules.environment.empty() ||
                         !rules.capabilities.empty() ||
                         !rules.images.empty() || rules.privileged;
  const bool has_restrictions =
      restrictions.memory_bytes || restrictions.nano_cpus ||
      restrictions.user || !restrictions.environment.empty();
  if (!has_rules && !has_restrictions) return "";

  out << YAML::BeginMap;
  if (has_rules) {
    out << YAML::Key << "docker" << YAML::Value << YAML::BeginMap;
    if (!rules.ports.empty()) {
      out << YAML::Key << "ports" << YAML::Value << YAML::BeginSeq;
      for (uint16_t p : rules.ports) out << static_cast<int>(p);
      out << YAML::EndSeq;
    }
    const auto emit_list = [&out](const char* key,
                                  const std::set<std::string>& values) {
      if (values.empty()) return;
      out << YAML::Key << key << YAML::Value << YAML::BeginSeq;
      for (const std::string& v : values) out << v;
      out << YAML::EndSeq;
    };
    emit_list("users", rules.users);
    emit_list("mounts", rules.mounts);
    emit_list("environment", rules.environment);
    emit_list("capabilities", rules.capabilities);
    emit_list("images", rules.images);
    if (rules.privileged) {
      out << YAML::Key << "privileged" << YAML::Value << true;
    }
    out << YAML::EndMap;
  }
  if (has_restrictions) {
    out << YAML::Key << "restrictions" << YAML::Value << YAML::BeginMap;
    if (restrictions.memory_bytes) {
      const int64_t bytes = *restrictions.memory_bytes;
      std::string text;
      if (bytes % (1024LL * 1024 * 1024) == 0) {
        text = std::to_string(bytes / (1024LL * 1024 * 1024)) + "g";
      } else if (bytes % (1024LL * 1024) == 0) {
        text = std::to_string(bytes / (1024LL * 1024)) + "m";
      } else if (bytes % 1024 == 0) {
        text = std::to_string(bytes / 1024) + "k";
      } else {
        text = std::to_string(bytes) + "b";
      }
      out << YAML::Key << "memory" << YAML::Value << text;
    }
    if (restrictions.nano_cpus) {
      out << YAML::Key << "cpu" << YAML::Value
          << static_cast<double>(*restrictions.nano_cpus) / 1e9;
    }
    if (restrictions.user) {
      out << YAML::Key << "user" << YAML::Value << *restrictions.user;
    }
    if (!restrictions.environment.empty()) {
      out << YAML::Key << "environment" << YAML::Value << YAML::BeginSeq;
      for (const std::string& e : restrictions.environment) out << e;
      out << YAML::EndSeq;
    }
    out << YAML::EndMap;
  }
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

ProfileStore::ProfileStore(policy::SecurityProfile initial,
                           std::string source_path)
    : current_(std::make_shared<const policy::SecurityProfile>(
          std::move(initial))),
      source_path_(std::move(source_path)) {}

std::shared_ptr<const policy::SecurityProfile> ProfileStore::snapshot() const {
  std::shared_lock lock(mutex_);
  return current_;
}

void ProfileStore::replace(policy::SecurityProfile profile) {
  auto next = std::make_shared<const policy::SecurityProfile>(
      std::move(profile));
  std::unique_lock lock(mutex_);
  current_ = std::move(next);
  generation_.fetch_add(1);
}

namespace {

struct FileSignature {
  std::filesystem::file_time_type mtime;
  uintmax_t size = 0;

  bool operator==(const FileSignature&) const = default;
};

std::optional<FileSignature> stat_signature(const std::string& path) {
  std::error_code ec;
  const auto mtime = std::filesystem::last_write_time(path, ec);
  if (ec) return std::nullopt;
  const auto size = std::filesystem::file_size(path, ec);
  if (ec) return std::nullopt;
  return FileSignature{mtime, size};
}

}  // namespace

ProfileWatcher::ProfileWatcher(ProfileStore& store,
                               std::chrono::milliseconds poll_interval,
                               ErrorFn on_error, ReloadFn on_reload)
    : store_(store),
      poll_interval_(poll_interval),
      on_error_(std::move(on_error)),
      on_reload_(std::move(on_reload)) {}

ProfileWatcher::~ProfileWatcher() { stop(); }

void ProfileWatcher::start() {
  if (thread_.joinable()) return;
  stop_.store(false);
  thread_ = std::thread(&ProfileWatcher::run, this);
}

void ProfileWatcher::stop() {
  stop_.store(true);
  if (thread_.joinable()) thread_.join();
}

void ProfileWatcher::run() {
  std::optional<FileSignature> last = stat_signature(store_.source_path());
  while (!stop_.load()) {
    // Sleep in short slices so stop() stays prompt.
    auto remaining = poll_interval_;
    while (remaining.count() > 0 && !stop_.load()) {
      const auto slice = std::min(remaining, std::chrono::milliseconds(50));
      std::this_thread::sleep_for(slice);
      remaining -= slice;
    }
    if (stop_.load()) break;

    const auto sig = stat_signature(store_.source_path());
    if (sig == last) continue;
    last = sig;
    if (!sig) {
      if (on_error_) {
        on_error_({ConfigErrorKind::IoError,
                   "config file disappeared: " + store_.source_path(),
                   std::nullopt, std::nullopt});
      }
      continue;
    }
    auto loaded = load_profile_file(store_.source_path());
    if (loaded.ok()) {
      store_.replace(loaded.take());
      if (on_reload_) on_reload_(store_.generation());
    } else if (on_error_) {
      on_error_(loaded.error());
    }
  }
}

}  // namespace secdocker::config
