// Copyright the SecDocker authors. SPDX-License-Identifier: Apache-2.0

#include "secdocker/docker_model.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>

namespace secdocker::docker {

namespace {

// Strips a leading /vMAJOR.MINOR API-version segment (v1.24 and newer).
std::string_view strip_version_prefix(std::string_view path) {
  if (path.size() < 3 || path[0] != '/' || path[1] != 'v') return path;
  size_t i = 2;
  size_t major = 0;
  while (i < path.size() && std::isdigit(static_cast<unsigned char>(path[i]))) {
    major = major * 10 + (path[i] - '0');
    ++i;
  }
  if (i == 2 || i >= path.size() || path[i] != '.') return path;
  ++i;
  size_t minor = 0;
  const size_t minor_start = i;
  while (i < path.size() && std::isdigit(static_cast<unsigned char>(path[i]))) {
    minor = minor * 10 + (path[i] - '0');
    ++i;
  }
  if (i == minor_start) return path;
  if (i < path.size() && path[i] != '/') return path;
  if (major < 1 || (major == 1 && minor < 24)) return path;
  return path.substr(i);
}

std::string url_decode(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '+') {
      out.push_back(' ');
    } else if (text[i] == '%' && i + 2 < text.size() &&
               std::isxdigit(static_cast<unsigned char>(text[i + 1])) &&
               std::isxdigit(static_cast<unsigned char>(text[i + 2]))) {
      int value = 0;
      std::from_chars(text.data() + i + 1, text.data() + i + 3, value, 16);
      out.push_back(static_cast<char>(value));
      i += 2;
    } else {
      out.push_back(text[i]);
    }
  }
  return out;
}

std::optional<std::string> query_param(std::string_view query,
                                       std::string_view key) {
  size_t pos = 0;
  while (pos <= query.size()) {
    const size_t amp = std::min(query.find('&', pos), query.size());
    const std::string_view pair = query.substr(pos, amp - pos);
    const size_t eq = pair.find('=');
    const std::string_view k = eq == std::string_view::npos
                                   ? pair
                                   : pair.substr(0, eq);
    if (k == key) {
      return url_decode(eq == std::string_view::npos ? std::string_view{}
                                                     : pair.substr(eq + 1));
    }
    pos = amp + 1;
  }
  return std::nullopt;
}

// "8080/tcp" or "53/udp" or plain "8080".
Result<uint16_t, ParseError> parse_port_key(const std::string& key) {
  const size_t slash = key.find('/');
  const std::string_view digits =
      std::string_view(key).substr(0, std::min(slash, key.size()));
  if (digits.empty()) return ParseError{"invalid port key '" + key + "'"};
  unsigned value = 0;
  for (char c : digits) {
    if (!std::isdigit(static_cast<unsigned char>(c))) {
      return ParseError{"invalid port key '" + key + "'"};
    }
    value = value * 10 + static_cast<unsigned>(c - '0');
    if (value > 65535) return ParseError{"port out of range in '" + key + "'"};
  }
  if (value == 0) return ParseError{"port out of range in '" + key + "'"};
  return static_cast<uint16_t>(value);
}

}  // namespace

EndpointClass classify_endpoint(std::string_view method,
                                std::string_view path) {
  const size_t qmark = path.find('?');
  if (qmark != std::string_view::npos) path = path.substr(0, qmark);
  if (method == "POST" && strip_version_prefix(path) == "/containers/create") {
    return EndpointClass::CreateContainer;
  }
  return EndpointClass::Passthrough;
}

std::string normalize_image(const std::string& image) {
  const size_t slash = image.rfind('/');
  const std::string_view name_part =
      std::string_view(image).substr(slash == std::string::npos ? 0 : slash);
  if (name_part.find(':') == std::string_view::npos &&
      name_part.find('@') == std::string_view::npos) {
    return image + ":latest";
  }
  return image;
}

std::string normalize_capability(std::string_view name) {
  std::string out(name);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return std::toupper(c); });
  if (out.rfind("CAP_", 0) == 0) out.erase(0, 4);
  return out;
}

Result<ContainerRequestSpec, ParseError> parse_create_request(
    std::string_view body, std::string_view query) {
  Json doc = Json::parse(body, nullptr, /*allow_exceptions=*/false);
  if (doc.is_discarded()) {
    return ParseError{"request body is not valid JSON"};
  }
  if (!doc.is_object()) {
    return ParseError{"request body must be a JSON object"};
  }

  ContainerRequestSpec spec;

  const auto img = doc.find("Image");
  if (img == doc.end() || !img->is_string() ||
      img->get<std::string>().empty()) {
    return ParseError{"missing Image"};
  }
  spec.image = img->get<std::string>();
  doc.erase("Image");

  if (doc.contains("User")) {
    const Json& u = doc["User"];
    if (u.is_string()) {
      if (!u.get<std::string>().empty()) spec.user = u.get<std::string>();
    } else if (!u.is_null()) {
      return ParseError{"User must be a string"};
    }
    doc.erase("User");
  }

  if (doc.contains("Env")) {
    const Json& env = doc["Env"];
    if (env.is_array()) {
      for (const Json& entry : env) {
        if (!entry.is_string()) {
          return ParseError{"Env must be an array of strings"};
        }
        spec.env.push_back(entry.get<std::string>());
      }
    } else if (!env.is_null()) {
      return ParseError{"Env must be an array of strings"};
    }
    doc.erase("Env");
  }

  if (doc.contains("ExposedPorts")) {
    const Json& exposed = doc["ExposedPorts"];
    if (exposed.is_object()) {
      for (const auto& item : exposed.items()) {
        auto port = parse_port_key(item.key());
        if (!port.ok()) return port.error();
        spec.ports.insert(port.value());
      }
    } else if (!exposed.is_null()) {
      return ParseError{"ExposedPorts must be an object"};
    }
  }

  if (doc.contains("HostConfig")) {
    Json& hc = doc["HostConfig"];
    if (hc.is_null()) {
      doc.erase("HostConfig");
    } else if (!hc.is_object()) {
      return ParseError{"HostConfig must be an object"};
    } else {
      if (hc.contains("Memory")) {
        const Json& mem = hc["Memory"];
        if (mem.is_number_integer() || mem.is_number_unsigned()) {
          const int64_t value = mem.get<int64_t>();
          if (value < 0) {
            return ParseError{"HostConfig.Memory must be non-negative"};
          }
          if (value > 0) spec.memory_bytes = value;
        } else if (!mem.is_null()) {
          return ParseError{"HostConfig.Memory must be an integer"};
        }
        hc.erase("Memory");
      }
      if (hc.contains("NanoCpus")) {
        const Json& cpus = hc["NanoCpus"];
        if (cpus.is_number_integer() || cpus.is_number_unsigned()) {
          const int64_t value = cpus.get<int64_t>();
          if (value < 0) {
            return ParseError{"HostConfig.NanoCpus must be non-negative"};
          }
          if (value > 0) spec.nano_cpus = value;
        } else if (!cpus.is_null()) {
          return ParseError{"HostConfig.NanoCpus must be an integer"};
        }
        hc.erase("NanoCpus");
      }
      if (hc.contains("Privileged")) {
        const Json& priv = hc["Privileged"];
        if (priv.is_boolean()) {
          spec.privileged = priv.get<bool>();
        } else if (!priv.is_null()) {
          return ParseError{"HostConfig.Privileged must be a boolean"};
        }
      }
      for (const char* key : {"CapAdd", "CapDrop"}) {
        if (!hc.contains(key)) continue;
        const Json& caps = hc[key];
        if (caps.is_null()) continue;
        if (!caps.is_array()) {
          return ParseError{std::string("HostConfig.") + key +
                            " must be an array of strings"};
        }
        auto& target = key[3] == 'A' ? spec.cap_add : spec.cap_drop;
        for (const Json& cap : caps) {
          if (!cap.is_string()) {
            return ParseError{std::string("HostConfig.") + key +
                              " must be an array of strings"};
          }
          target.insert(normalize_capability(cap.get<std::string>()));
        }
      }
      if (hc.contains("Binds")) {
        const Json& binds = hc["Binds"];
        if (binds.is_array()) {
          for (const Json& bind : binds) {
            if (!bind.is_string()) {
              return ParseError{"HostConfig.Binds must be an array of strings"};
            }
            const std::string text = bind.get<std::string>();
            const size_t colon = text.find(':');
            if (colon == std::string::npos || colon == 0 ||
                colon == text.size() - 1) {
              return ParseError{"HostConfig.Binds entry must be "
                                "source:container[:options], got '" +
                                text + "'"};
            }
            // Sources without a leading / are named volumes, not host paths.
            if (text[0] != '/') continue;
            const size_t second = text.find(':', colon + 1);
            Mount mount;
            mount.host_path = text.substr(0, colon);
            mount.container_path = text.substr(
                colon + 1,
                second == std::string::npos ? std::string::npos
                                            : second - colon - 1);
            if (second != std::string::npos) {
              // Options are comma-separated tokens, e.g. "ro,z".
              std::string_view opts = std::string_view(text).substr(second + 1);
              while (!opts.empty()) {
                const size_t comma = std::min(opts.find(','), opts.size());
                if (opts.substr(0, comma) == "ro") mount.read_only = true;
                opts = comma == opts.size() ? std::string_view{}
                                            : opts.substr(comma + 1);
              }
            }
            spec.mounts.push_back(mount);
          }
        } else if (!binds.is_null()) {
          return ParseError{"HostConfig.Binds must be an array of strings"};
        }
      }
      if (hc.contains("Mounts")) {
        const Json& mounts = hc["Mounts"];
        if (mounts.is_array()) {
          for (const Json& m : mounts) {
            if (!m.is_object()) {
              return ParseError{"HostConfig.Mounts must be an array of "
                                "objects"};
            }
            if (m.value("Type", "") != "bind") continue;
            if (!m.contains("Source") || !m["Source"].is_string() ||
                !m.contains("Target") || !m["Target"].is_string()) {
              return ParseError{"HostConfig.Mounts bind entry requires "
                                "Source and Target strings"};
            }
            Mount mount;
            mount.host_path = m["Source"].get<std::string>();
            mount.container_path = m["Target"].get<std::string>();
            mount.read_only = m.value("ReadOnly", false);
            spec.mounts.push_back(mount);
          }
        } else if (!mounts.is_null()) {
          return ParseError{"HostConfig.Mounts must be an array of objects"};
        }
      }
      if (hc.contains("PortBindings")) {
        const Json& bindings = hc["PortBindings"];
        if (bindings.is_object()) {
          for (const auto& item : bindings.items()) {
            auto port = parse_port_key(item.key());
            if (!port.ok()) return port.error();
            spec.ports.insert(port.value());
          }
        } else if (!bindings.is_null()) {
          return ParseError{"HostConfig.PortBindings must be an object"};
        }
      }
      if (hc.empty()) doc.erase("HostConfig");
    }
  }

  if (auto name = query_param(query, "name"); name && !name->empty()) {
    spec.container_name = *name;
  }

  spec.raw_extra = std::move(doc);
  return spec;
}

std::string render_create_body(const ContainerRequestSpec& spec) {
  Json doc = spec.raw_extra.is_object() ? spec.raw_extra : Json::object();
  doc["Image"] = spec.image;
  if (spec.user && !spec.user->empty()) doc["User"] = *spec.user;
  if (!spec.env.empty()) doc["Env"] = spec.env;
  if (spec.memory_bytes || spec.nano_cpus) {
    if (!doc.contains("HostConfig") || !doc["HostConfig"].is_object()) {
      doc["HostConfig"] = Json::object();
    }
    if (spec.memory_bytes) doc["HostConfig"]["Memory"] = *spec.memory_bytes;
    if (spec.nano_cpus) doc["HostConfig"]["NanoCpus"] = *spec.nano_cpus;
  }
  return doc.dump();
}

}  // namespace secdocker::docker
