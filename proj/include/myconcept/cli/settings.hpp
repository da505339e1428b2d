// Copyright 2026 The MyConcept Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <CLI11.hpp>

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <string>

#include "myconcept/core/errors.hpp"

namespace myconcept::cli {

/// Settings shared by every subcommand. Each one can come from a flag, an
/// environment variable or the config file, in that order of precedence.
struct Settings {
  std::string store_dir = "myconcept-store";
  std::string model_path = "models";
  std::string mode = "prefix";
  int port = 8080;
  std::uint64_t seed = 0;
  int threads = 1;
  std::string token;
};

using ValueMap = std::map<std::string, std::string>;

/// Config keys and the environment variables that override them.
inline const std::map<std::string, std::string>& setting_env_names() {
  static const std::map<std::string, std::string> names = {
      {"store_dir", "MYCONCEPT_STORE_DIR"}, {"model_path", "MYCONCEPT_MODEL_PATH"}, {"mode", "MYCONCEPT_MODE"},
      {"port", "MYCONCEPT_PORT"},           {"seed", "MYCONCEPT_SEED"},             {"threads", "MYCONCEPT_THREADS"},
      {"token", "MYCONCEPT_TOKEN"}};
  return names;
}

/// Reads `key = value` lines (TOML subset: comments, quoted strings).
inline ValueMap read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read config file", path);
  ValueMap out;
  for (const auto& item : CLI::ConfigTOML().from_config(in)) {
    if (item.name == "++" || item.name == "--") continue;  // section markers
    const std::string key = item.fullname();
    if (!setting_env_names().count(key)) throw ValidationError("unknown config key '" + key + "'", path);
    if (item.inputs.size() != 1) throw ValidationError("config key '" + key + "' needs exactly one value", path);
    out[key] = item.inputs.front();
  }
  return out;
}

inline ValueMap environment_values(const std::function<const char*(const char*)>& getenv_fn = std::getenv) {
  ValueMap out;
  for (const auto& [key, env] : setting_env_names())
    if (const char* v = getenv_fn(env.c_str()); v != nullptr && *v != '\0') out[key] = v;
  return out;
}

inline void apply_values(Settings& s, const ValueMap& values, const std::string& source) {
  for (const auto& [key, value] : values) {
    try {
      if (key == "store_dir") {
        s.store_dir = value;
      } else if (key == "model_path") {
        s.model_path = value;
      } else if (key == "mode") {
        if (value != "qformer" && value != "prefix") throw std::invalid_argument("mode");
        s.mode = value;
      } else if (key == "port") {
        s.port = std::stoi(value);
        if (s.port < 0 || s.port > 65535) throw std::invalid_argument("port");
      } else if (key == "seed") {
        s.seed = std::stoull(value);
      } else if (key == "threads") {
        s.threads = std::stoi(value);
        if (s.threads < 1) throw std::invalid_argument("threads");
      } else if (key == "token") {
        s.token = value;
      } else {
        throw ValidationError("unknown setting '" + key + "'", source);
      }
    } catch (const std::logic_error&) {
      throw ValidationError("invalid value '" + value + "' for " + key, source);
    }
  }
}

/// defaults < config file < environment < flags.
inline Settings resolve_settings(Settings defaults, const ValueMap& file, const ValueMap& env, const ValueMap& flags) {
  apply_values(defaults, file, "config file");
  apply_values(defaults, env, "environment");
  apply_values(defaults, flags, "command line");
  return defaults;
}

}  // namespace myconcept::cli
