// Copyright the SecDocker authors. SPDX-License-Identifier: Apache-2.0

#ifndef SECDOCKER_POLICY_HPP_
#define SECDOCKER_POLICY_HPP_

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "secdocker/docker_model.hpp"

namespace secdocker::policy {

// Deny rules: a match forbids the request.
struct OptionRules {
  std::set<uint16_t> ports;         // container ports that must not be used
  std::set<std::string> users;      // forbidden container users (name or uid)
  std::set<std::string> mounts;     // forbidden host-path prefixes for binds
  std::set<std::string> environment;  // KEY or KEY=VAL
  std::set<std::string> capabilities;  // forbidden capability additions
  std::set<std::string> images;     // scope filter; empty means every image
  bool privileged = false;          // deny privileged containers

  bool operator==(const OptionRules&) const = default;
};

// Enforced mutations applied to allowed requests.
struct Restrictions {
  std::optional<int64_t> memory_bytes;  // cap, strictly positive
  std::optional<int64_t> nano_cpus;     // cap, strictly positive
  std::optional<std::string> user;      // forced only when the request leaves
                                        // the user unset
  std::vector<std::string> environment;  // KEY=VAL injected when KEY absent

  bool operator==(const Restrictions&) const = default;
};

struct SecurityProfile {
  OptionRules option_rules;
  Restrictions restrictions;

  bool operator==(const SecurityProfile&) const = default;
};

enum class RuleKind { Ports, Users, Mounts, Environment, Capabilities,
                      Privileged };
std::string_view to_string(RuleKind kind);

struct Violation {
  RuleKind kind;
  std::string offending_value;  // verbatim from the request spec

  bool operator==(const Violation&) const = default;
  bool operator<(const Violation& other) const {
    return kind != other.kind ? kind < other.kind
                              : offending_value < other.offending_value;
  }
};

// "privileged=true", "ports=8080"
std::string describe(const Violation& violation);

struct MutationRecord {
  std::string field;   // memory | cpu | user | environment
  std::string detail;  // the enforced value or injected entry

  bool operator==(const MutationRecord&) const = default;
};

// "memory=536870912", "environment=CI=1"
std::string describe(const MutationRecord& mutation);

class Decision {
 public:
  enum class Kind { Allow, AllowWithMutations, Deny };

  static Decision allow() { return Decision(Kind::Allow, {}, {}); }
  static Decision with_mutations(std::vector<MutationRecord> mutations);
  static Decision deny(std::vector<Violation> violations);

  Kind kind() const { return kind_; }
  bool denied() const { return kind_ == Kind::Deny; }
  const std::vector<MutationRecord>& mutations() const { return mutations_; }
  const std::vector<Violation>& violations() const { return violations_; }

  bool operator==(const Decision&) const = default;

 private:
  Decision(Kind kind, std::vector<MutationRecord> mutations,
           std::vector<Violation> violations)
      : kind_(kind),
        mutations_(std::move(mutations)),
        violations_(std::move(violations)) {}

  Kind kind_;
  std::vector<MutationRecord> mutations_;
  std::vector<Violation> violations_;
};

// True iff rules.images is empty or contains the image after tag
// normalization (a missing tag reads as :latest).
bool in_scope(const OptionRules& rules, const std::string& image);

// Pure: Deny when any option rule matches (after image-scope filtering),
// otherwise Allow / AllowWithMutations depending on whether the restrictions
// would change the spec. Denial short-circuits mutation.
Decision evaluate(const SecurityProfile& profile,
                  const docker::ContainerRequestSpec& spec);

// Applies the restriction mutations: memory/cpu = min(requested, cap), user
// forced only when unset, env entries injected only when their KEY is absent.
// Idempotent.
std::pair<docker::ContainerRequestSpec, std::vector<MutationRecord>>
apply_restrictions(const Restrictions& restrictions,
                   const docker::ContainerRequestSpec& spec);

}  // namespace secdocker::policy

#endif  // SECDOCKER_POLICY_HPP_
