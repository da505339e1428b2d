// Copyright 2026 The MyConcept Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "myconcept/io/image_io.hpp"
#include "myconcept/store/concept_store.hpp"
#include "myconcept/store/dataset.hpp"

namespace myconcept::store {

namespace detail {

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read", path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception&) {
    throw ValidationError("not valid JSON", path.string());
  }
}

inline std::vector<std::filesystem::path> image_files(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  if (!std::filesystem::is_directory(dir)) return out;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && io::has_image_extension(entry.path())) out.push_back(entry.path());
  std::sort(out.begin(), out.end());
  return out;
}

inline Image read_model_image(const std::filesystem::path& path) { return io::to_model_input(io::load_image(path)); }

}  // namespace detail

/// Reads a concept directory:
///   meta.json       {name, identifier, category, type[, concept_id]}
///   images/         PNG or JPEG files
///   captions.json   {"<image file>": "caption with <concept>"}
///   variants.json   {"<image file>": ["variant", ...]}          (optional)
///   qa.json         {"<image file>": [{"question", "answer"}]}  (optional)
///   face_probes.json {"<image file>": [floats]}                 (optional)
///   negatives/      PNG or JPEG files                          (optional)
/// Images are brought to the model's input size on load.
inline ConceptDataset ingest_concept_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ValidationError("not a concept directory", dir.string());
  const ConceptMeta meta = meta_from_json(detail::read_json_file(dir / "meta.json"), (dir / "meta.json").string());
  ConceptDataset ds;
  ds.concept_id = meta.concept_id.empty() ? dir.filename().string() : meta.concept_id;
  ds.name = meta.name;
  ds.identifier = meta.identifier;
  ds.category = meta.category;
  ds.type = meta.type;

  const auto files = detail::image_files(dir / "images");
  if (files.empty()) throw ValidationError("no images found", (dir / "images").string());
  const auto captions_path = dir / "captions.json";
  if (!std::filesystem::exists(captions_path)) throw ValidationError("missing captions file", captions_path.string());
  const nlohmann::json captions = detail::read_json_file(captions_path);
  const nlohmann::json variants =
      std::filesystem::exists(dir / "variants.json") ? detail::read_json_file(dir / "variants.json") : nlohmann::json::object();
  const nlohmann::json qa =
      std::filesystem::exists(dir / "qa.json") ? detail::read_json_file(dir / "qa.json") : nlohmann::json::object();
  const nlohmann::json probes = std::filesystem::exists(dir / "face_probes.json")
                                    ? detail::read_json_file(dir / "face_probes.json")
                                    : nlohmann::json::object();

  for (const auto& file : files) {
    const std::string key = file.filename().string();
    const std::string where = (dir / "captions.json").string() + " [" + key + "]";
    if (!captions.contains(key) || !captions[key].is_string())
      throw ValidationError("missing caption for image", (dir / "images" / key).string());
    const std::string caption = captions[key].get<std::string>();
    if (count_placeholders(caption) != 1)
      throw ValidationError("caption must contain " + std::string(kPlaceholder) + " exactly once", where);
    ds.image_ids.push_back(key);
    ds.images.push_back(detail::read_model_image(file));
    ds.captions.push_back(caption);

    std::vector<std::string> vs;
    if (variants.contains(key)) {
      for (const auto& v : variants[key]) {
        if (!v.is_string() || count_placeholders(v.get<std::string>()) != 1)
          throw ValidationError("caption variant must contain " + std::string(kPlaceholder) + " exactly once",
                                (dir / "variants.json").string() + " [" + key + "]");
        vs.push_back(v.get<std::string>());
      }
    }
    ds.variants.push_back(std::move(vs));

    std::vector<QaPair> pairs;
    if (qa.contains(key)) {
      for (const auto& p : qa[key]) {
        if (!p.is_object() || !p.contains("question") || !p.contains("answer"))
          throw ValidationError("question/answer entries need 'question' and 'answer'",
                                (dir / "qa.json").string() + " [" + key + "]");
        pairs.emplace_back(p["question"].get<std::string>(), p["answer"].get<std::string>());
      }
    }
    ds.qa_pairs.push_back(std::move(pairs));

    if (probes.contains(key)) ds.face_probes.push_back(probes[key].get<std::vector<double>>());
  }
  if (!ds.face_probes.empty() && ds.face_probes.size() != ds.images.size())
    throw ValidationError("face probes must cover every image", (dir / "face_probes.json").string());
  for (const auto& file : detail::image_files(dir / "negatives")) ds.negatives.push_back(detail::read_model_image(file));
  validate_dataset(ds);
  return ds;
}

/// Ingests every subdirectory of `root` that holds a meta.json.
inline std::vector<ConceptDataset> ingest_concept_dirs(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root)) throw ValidationError("not a directory", root.string());
  std::vector<std::filesystem::path> dirs;
  if (std::filesystem::exists(root / "meta.json")) dirs.push_back(root);
  for (const auto& entry : std::filesystem::directory_iterator(root))
    if (entry.is_directory() && std::filesystem::exists(entry.path() / "meta.json")) dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  std::vector<ConceptDataset> out;
  std::set<std::string> identifiers;
  for (const auto& d : dirs) {
    out.push_back(ingest_concept_dir(d));
    std::string id = out.back().identifier;
    for (char& c : id) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (!identifiers.insert(id).second) throw ValidationError("duplicate identifier '" + out.back().identifier + "'", d.string());
  }
  return out;
}

/// Writes `ds` in the layout ingest_concept_dir reads. With `with_meta` false an
/// existing meta.json is left alone.
inline void write_concept_dir(const ConceptDataset& ds, const std::filesystem::path& dir, bool with_meta = true) {
  std::filesystem::create_directories(dir / "images");
  auto write_json = [&](const std::string& name, const nlohmann::json& j) {
    const std::string text = j.dump(2);
    io::write_file_atomic(dir / name, std::vector<std::uint8_t>(text.begin(), text.end()));
  };
  if (with_meta)
    write_json("meta.json", {{"concept_id", ds.concept_id},
                           {"name", ds.name},
                           {"identifier", ds.identifier},
                           {"category", ds.category},
                           {"type", ds.type}});
  nlohmann::json captions = nlohmann::json::object(), variants = nlohmann::json::object(),
                 qa = nlohmann::json::object(), probes = nlohmann::json::object();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%03zu.png", i);
    io::save_png(ds.images[i], dir / "images" / name);
    captions[name] = ds.captions[i];
    if (i < ds.variants.size() && !ds.variants[i].empty()) variants[name] = ds.variants[i];
    if (i < ds.qa_pairs.size() && !ds.qa_pairs[i].empty()) {
      nlohmann::json pairs = nlohmann::json::array();
      for (const auto& [q, a] : ds.qa_pairs[i]) pairs.push_back({{"question", q}, {"answer", a}});
      qa[name] = pairs;
    }
    if (i < ds.face_probes.size()) probes[name] = ds.face_probes[i];
  }
  write_json("captions.json", captions);
  if (!variants.empty()) write_json("variants.json", variants);
  if (!qa.empty()) write_json("qa.json", qa);
  if (!probes.empty()) write_json("face_probes.json", probes);
  if (!ds.negatives.empty()) {
    std::filesystem::create_directories(dir / "negatives");
    for (std::size_t i = 0; i < ds.negatives.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "%03zu.png", i);
      io::save_png(ds.negatives[i], dir / "negatives" / name);
    }
  }
}

}  // namespace myconcept::store
