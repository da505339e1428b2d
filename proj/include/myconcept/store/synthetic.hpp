// Copyright 2026 The MyConcept Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "myconcept/core/image.hpp"
#include "myconcept/core/random.hpp"
#include "myconcept/store/dataset.hpp"

namespace myconcept::store {

// Colour-shape world used by every desk-scale test: one shape with a body colour
// and a horizontal accent stripe, on a noisy plain background.

struct NamedColor {
  const char* name;
  std::array<double, 3> rgb;
};

inline constexpr int kLevels = 4;
inline constexpr double level_center(int level) { return 0.125 + 0.25 * level; }

/// Object colours sit on the centres of a 4-level RGB lattice with pairwise L1
/// level distance of at least 2 and visible chroma.
inline const std::vector<NamedColor>& object_colors() {
  static const std::vector<NamedColor> colors = [] {
    const std::vector<std::pair<const char*, std::array<int, 3>>> levels = {
        {"blue", {0, 0, 2}},      {"azure", {0, 1, 3}},    {"green", {0, 2, 0}},   {"teal", {0, 2, 2}},
        {"spring", {0, 3, 1}},    {"cyan", {0, 3, 3}},     {"violet", {1, 0, 3}},  {"sky", {1, 2, 3}},
        {"lime", {1, 3, 0}},      {"mint", {1, 3, 2}},     {"maroon", {2, 0, 0}},  {"purple", {2, 0, 2}},
        {"lavender", {2, 1, 3}},  {"olive", {2, 2, 0}},    {"chartreuse", {2, 3, 1}}, {"red", {3, 0, 1}},
        {"magenta", {3, 0, 3}},   {"orange", {3, 1, 0}},   {"pink", {3, 1, 2}},    {"amber", {3, 2, 1}},
        {"yellow", {3, 3, 0}}};
    std::vector<NamedColor> out;
    for (const auto& [name, l] : levels)
      out.push_back({name, {level_center(l[0]), level_center(l[1]), level_center(l[2])}});
    return out;
  }();
  return colors;
}

inline const std::vector<NamedColor>& background_colors() {
  static const std::vector<NamedColor> colors = {{"gray", {0.5, 0.5, 0.5}},
                                                 {"white", {0.92, 0.92, 0.9}},
                                                 {"black", {0.08, 0.08, 0.1}},
                                                 {"brown", {0.42, 0.33, 0.25}}};
  return colors;
}

inline const std::vector<std::string>& shape_names() {
  static const std::vector<std::string> shapes = {"square", "circle", "triangle", "diamond"};
  return shapes;
}

inline const std::array<double, 3>& object_rgb(const std::string& name) {
  for (const auto& c : object_colors())
    if (name == c.name) return c.rgb;
  throw InputError("unknown object colour '" + name + "'");
}

inline const std::array<double, 3>& background_rgb(const std::string& name) {
  for (const auto& c : background_colors())
    if (name == c.name) return c.rgb;
  throw InputError("unknown background '" + name + "'");
}

/// The fixed appearance of a personal object.
struct ConceptLook {
  std::string shape;
  std::string body;
  std::string accent;
  bool operator==(const ConceptLook&) const = default;
};

struct SceneMeta {
  ConceptLook look;
  std::string background;
  std::string side;
  double size = 0;
  double cx = 0;
  double cy = 0;
};

struct Scene {
  Image image;
  SceneMeta meta;
};

inline constexpr int kSceneSize = 32;

inline bool inside_shape(const std::string& shape, double dx, double dy) {
  if (shape == "square") return std::abs(dx) <= 1 && std::abs(dy) <= 1;
  if (shape == "circle") return dx * dx + dy * dy <= 1;
  if (shape == "triangle") return dy <= 1 && dy >= -1 && std::abs(dx) <= (dy + 1) / 2;
  if (shape == "diamond") return std::abs(dx) + std::abs(dy) <= 1;
  throw InputError("unknown shape '" + shape + "'");
}

inline Image render_scene(const SceneMeta& m, Rng& rng, int size = kSceneSize) {
  Image img(size, size);
  const auto& bg = background_rgb(m.background);
  const auto& body = object_rgb(m.look.body);
  const auto& accent = object_rgb(m.look.accent);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = bg[c] + rng.normal(0.0, 0.03);
  const double half = m.size / 2;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double dx = (x + 0.5 - m.cx) / half;
      const double dy = (y + 0.5 - m.cy) / half;
      if (!inside_shape(m.look.shape, dx, dy)) continue;
      const auto& rgb = std::abs(dy) <= 0.35 ? accent : body;
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = rgb[c] + rng.normal(0.0, 0.03);
    }
  }
  const double gain = rng.uniform(0.95, 1.05);
  for (double& v : img.pixels) v = std::clamp(v * gain, 0.0, 1.0);
  return img;
}

inline ConceptLook random_look(Rng& rng) {
  const auto& colors = object_colors();
  ConceptLook look;
  look.shape = shape_names()[rng.index(shape_names().size())];
  look.body = colors[rng.index(colors.size())].name;
  do {
    look.accent = colors[rng.index(colors.size())].name;
  } while (look.accent == look.body);
  return look;
}

inline Scene random_scene(Rng& rng, const std::optional<ConceptLook>& look = std::nullopt) {
  SceneMeta m;
  m.look = look ? *look : random_look(rng);
  m.background = background_colors()[rng.index(background_colors().size())].name;
  m.size = rng.uniform(11.0, 22.0);
  m.cx = rng.uniform(m.size / 2, kSceneSize - m.size / 2);
  m.cy = rng.uniform(m.size / 2, kSceneSize - m.size / 2);
  m.side = m.cx < kSceneSize / 2.0 ? "left" : "right";
  Image img = render_scene(m, rng);
  return {std::move(img), std::move(m)};
}

inline std::string generic_caption(const SceneMeta& m) {
  if (m.size >= 15) return "a " + m.look.body + " " + m.look.shape + " on a " + m.background + " background";
  return "a small " + m.look.body + " object on a " + m.background + " background";
}

inline std::vector<QaPair> generic_qa(const SceneMeta& m) {
  return {{"what color is the object ?", "the object is " + m.look.body},
          {"where is the object ?", "the object is on the " + m.side},
          {"what is behind the object ?", "a " + m.background + " background"},
          {"what shape is the object ?", "it is a " + m.look.shape}};
}

/// Personalised caption templates; the first is the canonical caption.
inline std::vector<std::string> personal_captions(const std::string& background, const std::string& id = kPlaceholder) {
  const std::string tail = " a " + background + " background";
  return {id + " on" + tail, id + " is on" + tail, id + " sitting on" + tail, id + " lying on" + tail,
          id + " in front of" + tail};
}

/// Ten question/answer pairs about the concept in one scene.
inline std::vector<QaPair> personal_qa(const SceneMeta& m, const std::string& id = kPlaceholder) {
  const auto& l = m.look;
  return {{"what color is " + id + " ?", id + " is " + l.body},
          {"where is " + id + " ?", id + " is on the " + m.side},
          {"what shape is " + id + " ?", id + " is a " + l.shape},
          {"what is behind " + id + " ?", "a " + m.background + " background behind " + id},
          {"what is " + id + " on ?", id + " is on a " + m.background + " background"},
          {"what is the color of " + id + " ?", "the color of " + id + " is " + l.body},
          {"is " + id + " on the left or right ?", id + " is on the " + m.side},
          {"what is " + id + " ?", id + " is a " + l.body + " " + l.shape},
          {"describe " + id + " .", id + " is a " + l.body + " " + l.shape + " with a " + l.accent + " stripe"},
          {"where is " + id + " located in the image ?", id + " is on the " + m.side + " of the image"}};
}

/// Every word the synthetic world can produce, besides identifiers.
inline std::vector<std::string> world_words() {
  std::vector<std::string> w = {"a",      "small",  "object", "on",      "the",    "background", "it",
                                "is",     "what",   "color",  "where",   "shape",  "behind",     "left",
                                "right",  "please", "caption", "this",   "image",  "of",         "sitting",
                                "lying",  "in",     "front",  "with",    "stripe", "?",          ".",
                                "or",     "located", "describe", "and",  ","};
  for (const auto& c : object_colors()) w.push_back(c.name);
  for (const auto& c : background_colors()) w.push_back(c.name);
  for (const auto& s : shape_names()) w.push_back(s);
  return w;
}

struct SuiteOptions {
  std::size_t n_concepts = 10;
  std::size_t images_per_concept = 10;
  std::size_t n_negatives = 150;
  /// The last `n_people` concepts are typed as persons and carry face probes.
  std::size_t n_people = 0;
  std::size_t face_dim = 64;
  double face_noise = 0.05;
  std::uint64_t seed = 0;
};

inline const std::vector<std::string>& default_identifiers() {
  static const std::vector<std::string> ids = {"sks", "bob", "anna", "kiro", "mavi",
                                               "tobi", "luma", "zeno", "pip",  "rua",
                                               "olek", "vesa", "nilo", "dara", "fenn"};
  return ids;
}

/// Concepts get pairwise disjoint colours, drawn from one seeded permutation.
inline std::vector<ConceptLook> concept_looks(std::size_t n, Rng& rng) {
  const auto& colors = object_colors();
  if (2 * n > colors.size()) throw InputError("at most " + std::to_string(colors.size() / 2) + " synthetic concepts");
  std::vector<std::size_t> perm(colors.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng.engine());
  std::vector<ConceptLook> looks;
  for (std::size_t k = 0; k < n; ++k)
    looks.push_back({shape_names()[rng.index(shape_names().size())], colors[perm[2 * k]].name,
                     colors[perm[2 * k + 1]].name});
  return looks;
}

/// Random scenes whose look matches none of `exclude`.
inline std::vector<Image> negative_scenes(std::size_t n, const std::vector<ConceptLook>& exclude, Rng& rng) {
  std::vector<Image> out;
  while (out.size() < n) {
    Scene s = random_scene(rng);
    if (std::find(exclude.begin(), exclude.end(), s.meta.look) != exclude.end()) continue;
    out.push_back(std::move(s.image));
  }
  return out;
}

struct SyntheticSuite {
  std::vector<ConceptDataset> concepts;
  std::vector<ConceptLook> looks;
  /// Per concept, the scene metadata of each image.
  std::vector<std::vector<SceneMeta>> metas;
};

inline SyntheticSuite generate_synthetic_suite(const SuiteOptions& opt) {
  if (opt.n_concepts == 0 || opt.images_per_concept == 0) throw InputError("suite needs concepts and images");
  if (opt.n_concepts > default_identifiers().size()) throw InputError("too many synthetic concepts");
  if (opt.n_people > opt.n_concepts) throw InputError("n_people exceeds n_concepts");
  Rng rng(opt.seed);
  SyntheticSuite suite;
  suite.looks = concept_looks(opt.n_concepts, rng);
  const std::vector<Image> negatives = negative_scenes(opt.n_negatives, suite.looks, rng);
  for (std::size_t k = 0; k < opt.n_concepts; ++k) {
    const ConceptLook& look = suite.looks[k];
    ConceptDataset ds;
    ds.concept_id = "concept-" + std::to_string(k);
    ds.identifier = default_identifiers()[k];
    ds.name = look.body + " " + look.shape + " with " + look.accent + " stripe";
    ds.category = look.shape;
    const bool person = k >= opt.n_concepts - opt.n_people;
    ds.type = person ? "person" : "object";
    Vector face;
    if (person) {
      face = rng.normal_matrix(static_cast<Eigen::Index>(opt.face_dim), 1, 1.0).col(0);
      face.normalize();
    }
    std::vector<SceneMeta> metas;
    for (std::size_t i = 0; i < opt.images_per_concept; ++i) {
      Scene s = random_scene(rng, look);
      auto caps = personal_captions(s.meta.background);
      ds.image_ids.push_back(ds.concept_id + "/img" + std::to_string(i));
      ds.images.push_back(std::move(s.image));
      ds.captions.push_back(caps[0]);
      ds.variants.emplace_back(caps.begin() + 1, caps.end());
      ds.qa_pairs.push_back(personal_qa(s.meta));
      if (person) {
        Vector probe = face + rng.normal_matrix(face.size(), 1, opt.face_noise).col(0);
        ds.face_probes.push_back(to_std(probe.normalized()));
      }
      metas.push_back(s.meta);
    }
    ds.negatives = negatives;
    suite.concepts.push_back(std::move(ds));
    suite.metas.push_back(std::move(metas));
  }
  return suite;
}

}  // namespace myconcept::store
