// Copyright 2026 The MyConcept Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "myconcept/core/errors.hpp"
#include "myconcept/core/image.hpp"

namespace myconcept::store {

/// Literal marker standing in for the concept identifier inside caption files.
inline constexpr const char* kPlaceholder = "<concept>";

inline std::size_t count_placeholders(const std::string& text) {
  std::size_t n = 0;
  for (auto pos = text.find(kPlaceholder); pos != std::string::npos; pos = text.find(kPlaceholder, pos + 1)) ++n;
  return n;
}

inline std::string fill_placeholder(std::string text, const std::string& identifier) {
  const std::string marker = kPlaceholder;
  for (auto pos = text.find(marker); pos != std::string::npos; pos = text.find(marker, pos + identifier.size()))
    text.replace(pos, marker.size(), identifier);
  return text;
}

using QaPair = std::pair<std::string, std::string>;

struct ConceptDataset {
  std::string concept_id;
  std::string name;
  std::string identifier;
  std::string category;
  std::string type = "object";  // object | person
  std::vector<std::string> image_ids;
  std::vector<Image> images;
  /// One caption per image, holding the placeholder exactly once.
  std::vector<std::string> captions;
  /// Extra caption variants per image (may be empty).
  std::vector<std::vector<std::string>> variants;
  /// Question/answer pairs per image (may be empty).
  std::vector<std::vector<QaPair>> qa_pairs;
  std::vector<Image> negatives;
  /// Face-recognition probe vectors for person concepts, one per image.
  std::vector<std::vector<double>> face_probes;

  std::size_t size() const { return images.size(); }
};

inline void validate_dataset(const ConceptDataset& ds) {
  if (ds.images.empty()) throw ValidationError("dataset has no images", ds.concept_id);
  if (ds.captions.size() != ds.images.size() || ds.image_ids.size() != ds.images.size())
    throw ValidationError("every image needs an id and a caption", ds.concept_id);
  for (std::size_t i = 0; i < ds.captions.size(); ++i)
    if (count_placeholders(ds.captions[i]) != 1)
      throw ValidationError("caption must contain the placeholder exactly once", ds.image_ids[i]);
  for (std::size_t i = 0; i < ds.variants.size(); ++i)
    for (const auto& v : ds.variants[i])
      if (count_placeholders(v) != 1)
        throw ValidationError("caption variant must contain the placeholder exactly once", ds.image_ids.at(i));
}

}  // namespace myconcept::store
