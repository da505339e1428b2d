// Copyright 2026 The MyConcept Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "myconcept/heads/heads.hpp"
#include "myconcept/io/binary.hpp"
#include "myconcept/vlm/types.hpp"

namespace myconcept::store {

inline constexpr char kRecordMagic[4] = {'M', 'Y', 'C', '1'};
inline constexpr std::uint16_t kRecordVersion = 1;

/// One stored concept: metadata, the learned vector for one fusion mode and the
/// recognition head. Vector blocks are stored as float32, so values that are not
/// float-representable are rounded on save.
struct ConceptRecord {
  std::string concept_id;
  std::string name;
  std::string identifier;
  std::string category;
  std::string type = "object";
  vlm::FusionMode mode = vlm::FusionMode::qformer;
  /// Token slot the embedding was trained against.
  int identifier_token = -1;
  int version = 0;
  std::string created_at;
  std::optional<Vector> embedding;
  std::optional<heads::ConceptHead> head;
  /// Source id of the features the head scores.
  std::string head_embedder;
  nlohmann::json provenance = nlohmann::json::object();
};

namespace detail {

inline bool same_bits(const Vector& a, const Vector& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(double)) == 0;
}

inline bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

inline bool same_head(const heads::ConceptHead& a, const heads::ConceptHead& b) {
  if (a.index() != b.index()) return false;
  if (const auto* la = std::get_if<heads::LinearHead>(&a)) {
    const auto& lb = std::get<heads::LinearHead>(b);
    return same_bits(la->weights, lb.weights) && same_bits(la->bias, lb.bias) &&
           same_bits(la->threshold, lb.threshold) && la->trained_pos == lb.trained_pos &&
           la->trained_neg == lb.trained_neg && same_bits(la->training_auc, lb.training_auc) &&
           la->quality_warning == lb.quality_warning;
  }
  const auto& ga = std::get<heads::GalleryHead>(a);
  const auto& gb = std::get<heads::GalleryHead>(b);
  if (!same_bits(ga.threshold(), gb.threshold()) || ga.references().size() != gb.references().size()) return false;
  for (std::size_t i = 0; i < ga.references().size(); ++i)
    if (!same_bits(ga.references()[i], gb.references()[i])) return false;
  return true;
}

}  // namespace detail

/// Field-by-field equality, comparing floating-point values by their bits.
inline bool operator==(const ConceptRecord& a, const ConceptRecord& b) {
  if (a.concept_id != b.concept_id || a.name != b.name || a.identifier != b.identifier || a.category != b.category ||
      a.type != b.type || a.mode != b.mode || a.identifier_token != b.identifier_token || a.version != b.version ||
      a.created_at != b.created_at || a.head_embedder != b.head_embedder || a.provenance != b.provenance)
    return false;
  if (a.embedding.has_value() != b.embedding.has_value()) return false;
  if (a.embedding && !detail::same_bits(*a.embedding, *b.embedding)) return false;
  if (a.head.has_value() != b.head.has_value()) return false;
  return !a.head || detail::same_head(*a.head, *b.head);
}

inline nlohmann::json record_header(const ConceptRecord& r) {
  nlohmann::json j = {{"concept_id", r.concept_id},
                      {"name", r.name},
                      {"identifier", r.identifier},
                      {"category", r.category},
                      {"type", r.type},
                      {"mode", vlm::to_string(r.mode)},
                      {"identifier_token", r.identifier_token},
                      {"version", r.version},
                      {"created_at", r.created_at},
                      {"embedding_dim", r.embedding ? r.embedding->size() : 0},
                      {"provenance", r.provenance}};
  nlohmann::json h = {{"kind", "none"}, {"embedder", r.head_embedder}};
  if (r.head) {
    if (const auto* lin = std::get_if<heads::LinearHead>(&*r.head)) {
      h["kind"] = "linear";
      h["dim"] = lin->weights.size();
      h["bias"] = lin->bias;
      h["threshold"] = lin->threshold;
      h["trained_pos"] = lin->trained_pos;
      h["trained_neg"] = lin->trained_neg;
      h["training_auc"] = lin->training_auc;
      h["quality_warning"] = lin->quality_warning;
    } else {
      const auto& gal = std::get<heads::GalleryHead>(*r.head);
      h["kind"] = "gallery";
      h["dim"] = gal.dim();
      h["n_references"] = gal.references().size();
      h["threshold"] = gal.threshold();
      h["distance_metric"] = gal.metric();
    }
  }
  j["head"] = h;
  return j;
}

inline std::vector<std::uint8_t> serialize_record(const ConceptRecord& r) {
  io::ByteWriter w;
  w.bytes(kRecordMagic, 4);
  w.u16(kRecordVersion);
  const std::string header = record_header(r).dump();
  w.u32(static_cast<std::uint32_t>(header.size()));
  w.text(header);
  if (r.embedding) w.f32_block(*r.embedding);
  if (r.head) {
    if (const auto* lin = std::get_if<heads::LinearHead>(&*r.head)) {
      w.f32_block(lin->weights);
    } else {
      for (const auto& ref : std::get<heads::GalleryHead>(*r.head).references()) w.f32_block(ref);
    }
  }
  const std::uint32_t crc = io::crc32_of(w.data().data(), w.data().size());
  w.u32(crc);
  return std::move(w.data());
}

inline ConceptRecord deserialize_record(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 + 2 + 4 + 4) throw FormatError("concept record is truncated");
  if (std::memcmp(bytes.data(), kRecordMagic, 4) != 0) throw FormatError("not a concept record (bad magic)");
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + body, 4);
  if (io::crc32_of(bytes.data(), body) != stored_crc) throw CorruptionError("concept record checksum mismatch");

  io::ByteReader in(bytes.data(), body);
  char magic[4];
  in.bytes(magic, 4);
  const std::uint16_t version = in.u16();
  if (version != kRecordVersion) throw FormatError("unsupported concept record version " + std::to_string(version));
  const std::uint32_t header_len = in.u32();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in.text(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("concept record header is not valid JSON: ") + e.what());
  }
  ConceptRecord r;
  try {
    r.concept_id = j.at("concept_id").get<std::string>();
    r.name = j.at("name").get<std::string>();
    r.identifier = j.at("identifier").get<std::string>();
    r.category = j.at("category").get<std::string>();
    r.type = j.at("type").get<std::string>();
    r.mode = vlm::fusion_mode_from_string(j.at("mode").get<std::string>());
    r.identifier_token = j.at("identifier_token").get<int>();
    r.version = j.at("version").get<int>();
    r.created_at = j.at("created_at").get<std::string>();
    r.provenance = j.at("provenance");
    const auto dim = j.at("embedding_dim").get<Eigen::Index>();
    if (dim > 0) r.embedding = Vector(in.f32_block(dim, 1).col(0));
    const auto& h = j.at("head");
    r.head_embedder = h.at("embedder").get<std::string>();
    const std::string kind = h.at("kind").get<std::string>();
    if (kind == "linear") {
      heads::LinearHead lin;
      lin.weights = in.f32_block(h.at("dim").get<Eigen::Index>(), 1).col(0);
      lin.bias = h.at("bias").get<double>();
      lin.threshold = h.at("threshold").get<double>();
      lin.trained_pos = h.at("trained_pos").get<std::size_t>();
      lin.trained_neg = h.at("trained_neg").get<std::size_t>();
      lin.training_auc = h.at("training_auc").get<double>();
      lin.quality_warning = h.at("quality_warning").get<bool>();
      r.head = lin;
    } else if (kind == "gallery") {
      if (h.at("distance_metric").get<std::string>() != "cosine")
        throw FormatError("unsupported gallery distance metric");
      const auto d = h.at("dim").get<Eigen::Index>();
      std::vector<Vector> refs;
      for (std::size_t i = 0, n = h.at("n_references").get<std::size_t>(); i < n; ++i)
        refs.push_back(in.f32_block(d, 1).col(0));
      r.head = heads::GalleryHead::from_unit_references(std::move(refs), h.at("threshold").get<double>());
    } else if (kind != "none") {
      throw FormatError("unknown head kind '" + kind + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("concept record header is malformed: ") + e.what());
  } catch (const InputError& e) {
    throw FormatError(std::string("concept record holds an invalid head: ") + e.what());
  }
  if (in.remaining() != 0) throw FormatError("concept record has trailing bytes");
  return r;
}

inline void save_concept(const ConceptRecord& r, const std::filesystem::path& path) {
  io::write_file_atomic(path, serialize_record(r));
}

inline ConceptRecord load_concept(const std::filesystem::path& path) { return deserialize_record(io::read_file(path)); }

}  // namespace myconcept::store
