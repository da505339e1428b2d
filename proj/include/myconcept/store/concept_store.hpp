// Copyright 2026 The MyConcept Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "myconcept/core/errors.hpp"
#include "myconcept/store/record.hpp"

namespace myconcept::store {

inline std::string now_iso8601() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct ConceptMeta {
  std::string concept_id;
  std::string name;
  std::string identifier;
  std::string category;
  std::string type = "object";
  std::string created_at;
};

inline nlohmann::json to_json(const ConceptMeta& m) {
  return {{"concept_id", m.concept_id}, {"name", m.name},         {"identifier", m.identifier},
          {"category", m.category},     {"type", m.type},         {"created_at", m.created_at}};
}

/// Validates the user-facing fields shared by meta.json and the HTTP API.
inline ConceptMeta meta_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_object()) throw ValidationError("concept metadata must be a JSON object", where);
  ConceptMeta m;
  for (const char* key : {"name", "identifier", "category", "type"}) {
    if (!j.contains(key) || !j[key].is_string() || j[key].get<std::string>().empty())
      throw ValidationError(std::string("missing or empty '") + key + "'", where);
  }
  m.name = j["name"].get<std::string>();
  m.identifier = j["identifier"].get<std::string>();
  m.category = j["category"].get<std::string>();
  m.type = j["type"].get<std::string>();
  if (m.type != "object" && m.type != "person") throw ValidationError("type must be 'object' or 'person'", where);
  if (m.identifier.find_first_of(" \t\n") != std::string::npos)
    throw ValidationError("identifier must be a single word", where);
  if (j.contains("concept_id") && j["concept_id"].is_string()) m.concept_id = j["concept_id"].get<std::string>();
  if (j.contains("created_at") && j["created_at"].is_string()) m.created_at = j["created_at"].get<std::string>();
  return m;
}

/// Directory-backed concept store:
///   <root>/<concept_id>/meta.json
///   <root>/<concept_id>/records/<mode>-v<version>.myc
/// Every (concept, mode) keeps all versions; commit() appends the next one.
class ConceptStore {
 public:
  explicit ConceptStore(std::filesystem::path root) : root_(std::move(root)) {
    std::filesystem::create_directories(root_);
  }

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path concept_dir(const std::string& id) const { return root_ / id; }

  /// Registers a new concept; the identifier must be unused (case-insensitive).
  ConceptMeta create(ConceptMeta meta) {
    std::unique_lock lock(mutex_);
    const std::string wanted = lower(meta.identifier);
    for (const auto& m : list_unlocked())
      if (lower(m.identifier) == wanted) throw ConflictError("identifier '" + meta.identifier + "' is already in use");
    if (meta.concept_id.empty()) meta.concept_id = next_id();
    if (std::filesystem::exists(concept_dir(meta.concept_id)))
      throw ConflictError("concept '" + meta.concept_id + "' already exists");
    if (meta.created_at.empty()) meta.created_at = now_iso8601();
    write_meta(meta);
    return meta;
  }

  std::vector<ConceptMeta> list() const {
    std::shared_lock lock(mutex_);
    return list_unlocked();
  }

  std::optional<ConceptMeta> get(const std::string& id) const {
    std::shared_lock lock(mutex_);
    return read_meta(id);
  }

  bool remove(const std::string& id) {
    std::unique_lock lock(mutex_);
    if (!read_meta(id)) return false;
    std::filesystem::remove_all(concept_dir(id));
    return true;
  }

  /// Stores `r` as the next version for its (concept, mode) and returns it.
  ConceptRecord commit(ConceptRecord r) {
    std::unique_lock lock(mutex_);
    if (!read_meta(r.concept_id)) throw NotFoundError("unknown concept '" + r.concept_id + "'");
    const auto vs = versions_unlocked(r.concept_id, r.mode);
    r.version = vs.empty() ? 1 : vs.back() + 1;
    if (r.created_at.empty()) r.created_at = now_iso8601();
    save_concept(r, record_path(r.concept_id, r.mode, r.version));
    return r;
  }

  std::vector<int> versions(const std::string& id, vlm::FusionMode mode) const {
    std::shared_lock lock(mutex_);
    return versions_unlocked(id, mode);
  }

  std::optional<ConceptRecord> latest(const std::string& id, vlm::FusionMode mode) const {
    std::shared_lock lock(mutex_);
    const auto vs = versions_unlocked(id, mode);
    if (vs.empty()) return std::nullopt;
    return load_concept(record_path(id, mode, vs.back()));
  }

  ConceptRecord load(const std::string& id, vlm::FusionMode mode, int version) const {
    std::shared_lock lock(mutex_);
    const auto path = record_path(id, mode, version);
    if (!std::filesystem::exists(path))
      throw NotFoundError("no version " + std::to_string(version) + " of " + id + " (" + vlm::to_string(mode) + ")");
    return load_concept(path);
  }

 private:
  static std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
  }

  std::filesystem::path record_path(const std::string& id, vlm::FusionMode mode, int version) const {
    return concept_dir(id) / "records" / (vlm::to_string(mode) + "-v" + std::to_string(version) + ".myc");
  }

  void write_meta(const ConceptMeta& m) const {
    const std::string text = to_json(m).dump(2);
    io::write_file_atomic(concept_dir(m.concept_id) / "meta.json", std::vector<std::uint8_t>(text.begin(), text.end()));
  }

  std::optional<ConceptMeta> read_meta(const std::string& id) const {
    if (id.empty() || id.find('/') != std::string::npos || id == "." || id == "..") return std::nullopt;
    const auto path = concept_dir(id) / "meta.json";
    if (!std::filesystem::exists(path)) return std::nullopt;
    std::ifstream in(path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception&) {
      throw ValidationError("meta.json is not valid JSON", path.string());
    }
    ConceptMeta m = meta_from_json(j, path.string());
    m.concept_id = id;
    return m;
  }

  std::vector<ConceptMeta> list_unlocked() const {
    std::vector<ConceptMeta> out;
    for (const auto& entry : std::filesystem::directory_iterator(root_)) {
      if (!entry.is_directory()) continue;
      if (auto m = read_meta(entry.path().filename().string())) out.push_back(*m);
    }
    std::sort(out.begin(), out.end(), [](const ConceptMeta& a, const ConceptMeta& b) { return a.concept_id < b.concept_id; });
    return out;
  }

  std::vector<int> versions_unlocked(const std::string& id, vlm::FusionMode mode) const {
    std::vector<int> out;
    const auto dir = concept_dir(id) / "records";
    if (!std::filesystem::is_directory(dir)) return out;
    const std::string prefix = vlm::to_string(mode) + "-v";
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      const std::string name = entry.path().filename().string();
      if (name.rfind(prefix, 0) != 0 || entry.path().extension() != ".myc") continue;
      const std::string digits = name.substr(prefix.size(), name.size() - prefix.size() - 4);
      if (digits.empty() || digits.find_first_not_of("0123456789") != std::string::npos) continue;
      out.push_back(std::stoi(digits));
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  std::string next_id() const {
    int best = 0;
    for (const auto& entry : std::filesystem::directory_iterator(root_)) {
      const std::string name = entry.path().filename().string();
      if (name.size() > 1 && name[0] == 'c' && name.find_first_not_of("0123456789", 1) == std::string::npos)
        best = std::max(best, std::stoi(name.substr(1)));
    }
    char buf[16];
    std::snprintf(buf, sizeof buf, "c%04d", best + 1);
    return buf;
  }

  std::filesystem::path root_;
  mutable std::shared_mutex mutex_;
};

}  // namespace myconcept::store
