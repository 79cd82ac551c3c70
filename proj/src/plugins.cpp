// Copyright the SecDocker authors. SPDX-License-Identifier: Apache-2.0

#include "secdocker/plugins.hpp"

#include <algorithm>
#include <fstream>
#include <future>
#include <sstream>
#include <thread>

namespace secdocker::plugins {

std::string describe(const PluginVerdict& verdict) {
  if (!verdict.deny) return verdict.plugin_name + "=pass";
  return verdict.plugin_name + "=deny:" + verdict.reason;
}

bool PluginRegistry::add(std::string name, AdmissionHook hook,
                         std::chrono::milliseconds timeout) {
  const bool taken = std::any_of(entries_.begin(), entries_.end(),
                                 [&](const Entry& e) {
                                   return e.name == name;
                                 });
  if (taken) return false;
  entries_.push_back({std::move(name), std::move(hook), timeout});
  return true;
}

PluginVerdict run_pre_admission(const PluginRegistry& registry,
                                const docker::ContainerRequestSpec& spec,
                                std::vector<PluginVerdict>* all_verdicts) {
  PluginVerdict aggregate;
  aggregate.plugin_name = "";
  for (const PluginRegistry::Entry& entry : registry.entries()) {
    PluginVerdict verdict;
    verdict.plugin_name = entry.name;

    // The hook runs on its own thread so a hung plugin cannot stall the
    // request; on timeout the thread is abandoned and its result discarded.
    auto promise = std::make_shared<std::promise<PluginVerdict>>();
    auto future = promise->get_future();
    std::thread([promise, hook = entry.hook, spec, name = entry.name]() {
      PluginVerdict v;
      v.plugin_name = name;
      try {
        v = hook(spec);
        v.plugin_name = name;
      } catch (const std::exception& e) {
        v.deny = true;
        v.reason = std::string("hook failure: ") + e.what();
      } catch (...) {
        v.deny = true;
        v.reason = "hook failure";
      }
      try {
        promise->set_value(std::move(v));
      } catch (const std::future_error&) {
      }
    }).detach();

    if (future.wait_for(entry.timeout) == std::future_status::ready) {
      verdict = future.get();
    } else {
      verdict.deny = true;
      verdict.reason = "timeout";
    }
    if (verdict.deny && verdict.reason.empty()) {
      verdict.reason = "denied without reason";
    }
    if (all_verdicts != nullptr) all_verdicts->push_back(verdict);
    if (verdict.deny && !aggregate.deny) {
      aggregate = verdict;  // first denier wins the report
    }
  }
  return aggregate;
}

Result<ImageFixture, std::string> ImageFixture::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) return std::string("cannot open fixture '" + path + "'");
  ImageFixture fixture;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::string image;
    std::string action;
    if (!(fields >> image)) continue;  // blank line
    if (!(fields >> action) || (action != "pass" && action != "deny")) {
      return std::string("fixture '" + path + "' line " +
                         std::to_string(line_no) +
                         ": expected 'image[@digest] <pass|deny> [reason]'");
    }
    Entry entry;
    entry.deny = action == "deny";
    std::string word;
    while (fields >> word) {
      if (!entry.reason.empty()) entry.reason += ' ';
      entry.reason += word;
    }
    fixture.entries_[docker::normalize_image(image)] = std::move(entry);
  }
  if (in.bad()) return std::string("cannot read fixture '" + path + "'");
  return fixture;
}

const ImageFixture::Entry* ImageFixture::find(
    const std::string& image_reference) const {
  const auto it = entries_.find(docker::normalize_image(image_reference));
  return it == entries_.end() ? nullptr : &it->second;
}

StubImageScan::StubImageScan(const std::string& fixture_path) {
  auto loaded = ImageFixture::load(fixture_path);
  if (loaded.ok()) fixture_ = loaded.take();
}

PluginVerdict StubImageScan::operator()(
    const docker::ContainerRequestSpec& spec) const {
  PluginVerdict verdict;
  verdict.plugin_name = kName;
  if (!fixture_) {
    verdict.deny = true;
    verdict.reason = "scan unavailable";
    return verdict;
  }
  const ImageFixture::Entry* entry = fixture_->find(spec.image);
  if (entry != nullptr && entry->deny) {
    verdict.deny = true;
    verdict.reason = entry->reason.empty() ? "image flagged" : entry->reason;
  }
  return verdict;
}

StubSignatureVerify::StubSignatureVerify(const std::string& fixture_path,
                                         bool enabled)
    : enabled_(enabled) {
  if (!enabled_) return;
  auto loaded = ImageFixture::load(fixture_path);
  if (loaded.ok()) fixture_ = loaded.take();
}

PluginVerdict StubSignatureVerify::operator()(
    const docker::ContainerRequestSpec& spec) const {
  PluginVerdict verdict;
  verdict.plugin_name = kName;
  if (!enabled_) return verdict;
  if (!fixture_) {
    verdict.deny = true;
    verdict.reason = "trust data unavailable";
    return verdict;
  }
  const ImageFixture::Entry* entry = fixture_->find(spec.image);
  if (entry == nullptr || entry->deny) {
    verdict.deny = true;
    verdict.reason = "untrusted image";
    return verdict;
  }
  return verdict;
}

}  // namespace secdocker::plugins
