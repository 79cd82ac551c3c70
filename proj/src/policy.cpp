// Copyright the SecDocker authors. SPDX-License-Identifier: Apache-2.0

#include "secdocker/policy.hpp"

#include <algorithm>
#include <stdexcept>

namespace secdocker::policy {

namespace {

// Key of a KEY=VAL entry; the whole entry when there is no '='.
std::string_view env_key(std::string_view entry) {
  return entry.substr(0, std::min(entry.find('='), entry.size()));
}

// Path-component-aware prefix: /var matches /var and /var/run but not
// /variable.
bool path_has_prefix(std::string_view path, std::string_view prefix) {
  while (prefix.size() > 1 && prefix.back() == '/') prefix.remove_suffix(1);
  if (prefix.empty()) return false;
  if (prefix == "/") return !path.empty() && path.front() == '/';
  if (path.substr(0, prefix.size()) != prefix) return false;
  return path.size() == prefix.size() || path[prefix.size()] == '/';
}

// A rule entry "KEY" matches any value of KEY; "KEY=VAL" only that pair.
bool env_rule_matches(const std::string& rule, const std::string& entry) {
  if (rule.find('=') == std::string::npos) return env_key(entry) == rule;
  return rule == entry;
}

}  // namespace

std::string_view to_string(RuleKind kind) {
  switch (kind) {
    case RuleKind::Ports: return "ports";
    case RuleKind::Users: return "users";
    case RuleKind::Mounts: return "mounts";
    case RuleKind::Environment: return "environment";
    case RuleKind::Capabilities: return "capabilities";
    case RuleKind::Privileged: return "privileged";
  }
  return "unknown";
}

std::string describe(const Violation& violation) {
  return std::string(to_string(violation.kind)) + "=" +
         violation.offending_value;
}

std::string describe(const MutationRecord& mutation) {
  return mutation.field + "=" + mutation.detail;
}

Decision Decision::with_mutations(std::vector<MutationRecord> mutations) {
  if (mutations.empty()) {
    throw std::logic_error("AllowWithMutations requires at least one mutation");
  }
  return Decision(Kind::AllowWithMutations, std::move(mutations), {});
}

Decision Decision::deny(std::vector<Violation> violations) {
  if (violations.empty()) {
    throw std::logic_error("Deny requires at least one violation");
  }
  return Decision(Kind::Deny, {}, std::move(violations));
}

bool in_scope(const OptionRules& rules, const std::string& image) {
  if (rules.images.empty()) return true;
  const std::string wanted = docker::normalize_image(image);
  return std::any_of(rules.images.begin(), rules.images.end(),
                     [&](const std::string& entry) {
                       return docker::normalize_image(entry) == wanted;
                     });
}

Decision evaluate(const SecurityProfile& profile,
                  const docker::ContainerRequestSpec& spec) {
  const OptionRules& rules = profile.option_rules;
  std::vector<Violation> violations;

  if (in_scope(rules, spec.image)) {
    for (uint16_t port : spec.ports) {
      if (rules.ports.count(port) != 0) {
        violations.push_back({RuleKind::Ports, std::to_string(port)});
      }
    }
    if (spec.user && rules.users.count(*spec.user) != 0) {
      violations.push_back({RuleKind::Users, *spec.user});
    }
    for (const docker::Mount& mount : spec.mounts) {
      const bool hit = std::any_of(
          rules.mounts.begin(), rules.mounts.end(),
          [&](const std::string& prefix) {
            return path_has_prefix(mount.host_path, prefix);
          });
      if (hit) violations.push_back({RuleKind::Mounts, mount.host_path});
    }
    for (const std::string& entry : spec.env) {
      const bool hit = std::any_of(rules.environment.begin(),
                                   rules.environment.end(),
                                   [&](const std::string& rule) {
                                     return env_rule_matches(rule, entry);
                                   });
      if (hit) violations.push_back({RuleKind::Environment, entry});
    }
    // Only capability additions are policed; drops reduce privilege.
    for (const std::string& cap : spec.cap_add) {
      if (rules.capabilities.count(cap) != 0) {
        violations.push_back({RuleKind::Capabilities, cap});
      }
    }
    if (rules.privileged && spec.privileged) {
      violations.push_back({RuleKind::Privileged, "true"});
    }
  }

  if (!violations.empty()) {
    std::sort(violations.begin(), violations.end());
    violations.erase(std::unique(violations.begin(), violations.end()),
                     violations.end());
    return Decision::deny(std::move(violations));
  }

  auto [mutated, records] = apply_restrictions(profile.restrictions, spec);
  (void)mutated;
  if (records.empty()) return Decision::allow();
  return Decision::with_mutations(std::move(records));
}

std::pair<docker::ContainerRequestSpec, std::vector<MutationRecord>>
apply_restrictions(const Restrictions& restrictions,
                   const docker::ContainerRequestSpec& spec) {
  docker::ContainerRequestSpec out = spec;
  std::vector<MutationRecord> records;

  if (restrictions.memory_bytes) {
    const int64_t cap = *restrictions.memory_bytes;
    if (!out.memory_bytes || *out.memory_bytes > cap) {
      out.memory_bytes = cap;
      records.push_back({"memory", std::to_string(cap)});
    }
  }
  if (restrictions.nano_cpus) {
    const int64_t cap = *restrictions.nano_cpus;
    if (!out.nano_cpus || *out.nano_cpus > cap) {
      out.nano_cpus = cap;
      records.push_back({"cpu", std::to_string(cap)});
    }
  }
  if (restrictions.user && !out.user) {
    out.user = *restrictions.user;
    records.push_back({"user", *restrictions.user});
  }
  for (const std::string& entry : restrictions.environment) {
    const std::string_view key = env_key(entry);
    const bool present = std::any_of(out.env.begin(), out.env.end(),
                                     [&](const std::string& existing) {
                                       return env_key(existing) == key;
                                     });
    if (!present) {
      out.env.push_back(entry);
      records.push_back({"environment", entry});
    }
  }
  return {std::move(out), std::move(records)};
}

}  // namespace secdocker::policy
