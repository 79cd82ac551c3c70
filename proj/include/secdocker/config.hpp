// Copyright the SecDocker authors. SPDX-License-Identifier: Apache-2.0

#ifndef SECDOCKER_CONFIG_HPP_
#define SECDOCKER_CONFIG_HPP_

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <thread>

#include "secdocker/policy.hpp"
#include "secdocker/result.hpp"

namespace secdocker::config {

enum class ConfigErrorKind { IoError, YamlSyntax, SchemaViolation };

struct ConfigError {
  ConfigErrorKind kind;
  std::string detail;  // SchemaViolation names the offending key
  std::optional<int> line;
  std::optional<int> column;
};

std::string describe(const ConfigError& error);

// Parses and validates the YAML security profile. Unknown keys are rejected
// (fail-closed: a typo must not silently disable a rule).
Result<policy::SecurityProfile, ConfigError> load_profile(
    std::string_view yaml_text);

Result<policy::SecurityProfile, ConfigError> load_profile_file(
    const std::string& path);

// "512m" -> 536870912; suffixes b/k/m/g, base 1024, no suffix means bytes.
Result<int64_t, std::string> parse_memory_size(std::string_view text);

// Emits YAML that load_profile reads back to an equivalent profile.
std::string render_profile(const policy::SecurityProfile& profile);

// One atomically-replaceable profile snapshot: one writer (the watcher), any
// number of readers, readers never block each other.
class ProfileStore {
 public:
  ProfileStore(policy::SecurityProfile initial, std::string source_path);

  std::shared_ptr<const policy::SecurityProfile> snapshot() const;
  void replace(policy::SecurityProfile profile);  // bumps generation
  uint64_t generation() const { return generation_.load(); }
  const std::string& source_path() const { return source_path_; }

 private:
  mutable std::shared_mutex mutex_;
  std::shared_ptr<const policy::SecurityProfile> current_;
  std::atomic<uint64_t> generation_{1};
  std::string source_path_;
};

// Polls the profile file for mtime/size changes and swaps the store on each
// successful re-parse. A failed parse keeps the old profile and reports the
// error once per change.
class ProfileWatcher {
 public:
  using ErrorFn = std::function<void(const ConfigError&)>;
  using ReloadFn = std::function<void(uint64_t generation)>;

  ProfileWatcher(ProfileStore& store,
                 std::chrono::milliseconds poll_interval,
                 ErrorFn on_error = {}, ReloadFn on_reload = {});
  ~ProfileWatcher();

  void start();
  void stop();

 private:
  void run();

  ProfileStore& store_;
  std::chrono::milliseconds poll_interval_;
  ErrorFn on_error_;
  ReloadFn on_reload_;
  std::thread thread_;
  std::atomic<bool> stop_{false};
};

}  // namespace secdocker::config

#endif  // SECDOCKER_CONFIG_HPP_
