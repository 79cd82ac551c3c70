// Copyright the SecDocker authors. SPDX-License-Identifier: Apache-2.0

#ifndef SECDOCKER_PLUGINS_HPP_
#define SECDOCKER_PLUGINS_HPP_

#include <chrono>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "secdocker/docker_model.hpp"

namespace secdocker::plugins {

struct PluginVerdict {
  std::string plugin_name;
  bool deny = false;
  std::string reason;  // non-empty when deny

  bool operator==(const PluginVerdict&) const = default;
};

// "name=pass" / "name=deny:<reason>"
std::string describe(const PluginVerdict& verdict);

using AdmissionHook =
    std::function<PluginVerdict(const docker::ContainerRequestSpec&)>;

// Ordered set of pre-admission hooks. Names are unique; registration order
// only affects which denier gets reported first, not the outcome.
class PluginRegistry {
 public:
  struct Entry {
    std::string name;
    AdmissionHook hook;
    std::chrono::milliseconds timeout;
  };

  // False when the name is already taken.
  bool add(std::string name, AdmissionHook hook,
           std::chrono::milliseconds timeout = std::chrono::seconds(5));

  bool empty() const { return entries_.empty(); }
  size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }

 private:
  std::vector<Entry> entries_;
};

// Runs every hook. Aggregate is Deny when any hook denies; the first denier's
// reason is reported. A hook that throws or outlives its timeout counts as
// Deny (fail-closed). all_verdicts, when given, receives one verdict per hook
// in registration order.
PluginVerdict run_pre_admission(const PluginRegistry& registry,
                                const docker::ContainerRequestSpec& spec,
                                std::vector<PluginVerdict>* all_verdicts =
                                    nullptr);

// Fixture line format: image[@digest] <pass|deny> [reason ...]. Blank lines
// and #-comments are skipped.
class ImageFixture {
 public:
  static Result<ImageFixture, std::string> load(const std::string& path);

  struct Entry {
    bool deny = false;
    std::string reason;
  };
  const Entry* find(const std::string& image_reference) const;
  size_t size() const { return entries_.size(); }

 private:
  std::unordered_map<std::string, Entry> entries_;  // normalized references
};

// Stand-in for an image-analysis integration: flagged images are denied,
// unknown images pass. An unreadable fixture denies everything.
class StubImageScan {
 public:
  static constexpr const char* kName = "image-scan";

  explicit StubImageScan(const std::string& fixture_path);
  PluginVerdict operator()(const docker::ContainerRequestSpec& spec) const;

 private:
  std::optional<ImageFixture> fixture_;  // nullopt: load failed, fail closed
};

// Stand-in for an image-trust integration: only images with a `pass` fixture
// entry are trusted; everything else is denied while the plugin is enabled.
class StubSignatureVerify {
 public:
  static constexpr const char* kName = "signature-verify";

  StubSignatureVerify(const std::string& fixture_path, bool enabled = true);
  PluginVerdict operator()(const docker::ContainerRequestSpec& spec) const;

 private:
  std::optional<ImageFixture> fixture_;
  bool enabled_;
};

}  // namespace secdocker::plugins

#endif  // SECDOCKER_PLUGINS_HPP_
