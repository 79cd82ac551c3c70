// Copyright the SecDocker authors. SPDX-License-Identifier: Apache-2.0

#ifndef SECDOCKER_DOCKER_MODEL_HPP_
#define SECDOCKER_DOCKER_MODEL_HPP_

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "secdocker/result.hpp"

namespace secdocker::docker {

// Insertion order is kept so untouched payload fragments re-serialize the way
// they arrived.
using Json = nlohmann::ordered_json;

struct Mount {
  std::string host_path;
  std::string container_path;
  bool read_only = false;

  bool operator==(const Mount&) const = default;
};

// Normalized view of one container-create request.
//
// Two groups of fields:
//   - extracted: removed from the payload and owned here, because policy
//     restrictions may rewrite them (user, env, memory, cpu) or because they
//     identify the request (image). render_create_body() re-emits them.
//   - derived views: privileged, mounts, ports, cap_add/cap_drop and
//     container_name are read-only for policy; their JSON stays untouched
//     inside raw_extra and is re-serialized verbatim.
struct ContainerRequestSpec {
  std::string image;
  bool privileged = false;
  std::optional<std::string> user;
  std::vector<std::string> env;  // KEY=VAL, payload order
  std::vector<Mount> mounts;
  std::set<uint16_t> ports;  // exposed or published container ports
  std::set<std::string> cap_add;
  std::set<std::string> cap_drop;
  std::optional<int64_t> memory_bytes;
  std::optional<int64_t> nano_cpus;
  std::optional<std::string> container_name;  // from the create query string
  Json raw_extra = Json::object();  // payload remainder, preserved verbatim

  bool operator==(const ContainerRequestSpec&) const = default;
};

enum class EndpointClass { CreateContainer, Passthrough };

// POST /containers/create (optionally /vX.Y-prefixed, query ignored) is the
// intercepted endpoint; everything else passes through.
EndpointClass classify_endpoint(std::string_view method, std::string_view path);

struct ParseError {
  std::string detail;
};

Result<ContainerRequestSpec, ParseError> parse_create_request(
    std::string_view body, std::string_view query);

// Inverse of parse_create_request: parse(render(s)) == s for every valid s.
std::string render_create_body(const ContainerRequestSpec& spec);

// "image" -> "image:latest"; references that already carry a tag or digest
// are returned unchanged.
std::string normalize_image(const std::string& image);

// Upper-cases and strips an optional CAP_ prefix: "cap_sys_admin" ->
// "SYS_ADMIN".
std::string normalize_capability(std::string_view name);

}  // namespace secdocker::docker

#endif  // SECDOCKER_DOCKER_MODEL_HPP_
