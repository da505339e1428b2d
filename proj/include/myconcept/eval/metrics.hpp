// Copyright 2026 The MyConcept Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "myconcept/core/errors.hpp"
#include "myconcept/core/image.hpp"
#include "myconcept/core/linalg.hpp"
#include "myconcept/core/random.hpp"
#include "myconcept/vlm/encoder.hpp"
#include "myconcept/vlm/tokenizer.hpp"

namespace myconcept::eval {

inline bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_'; }

inline std::string to_lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

/// Start offsets of whole-word, case-insensitive occurrences of `word` in `text`.
inline std::vector<std::size_t> find_word(const std::string& text, const std::string& word) {
  std::vector<std::size_t> hits;
  if (word.empty()) return hits;
  const std::string t = to_lower(text);
  const std::string w = to_lower(word);
  for (auto pos = t.find(w); pos != std::string::npos; pos = t.find(w, pos + 1)) {
    const bool left = pos == 0 || !is_word_char(t[pos - 1]) || !is_word_char(w.front());
    const std::size_t end = pos + w.size();
    const bool right = end == t.size() || !is_word_char(t[end]) || !is_word_char(w.back());
    if (left && right) hits.push_back(pos);
  }
  return hits;
}

inline bool mentions_identifier(const std::string& caption, const std::string& identifier) {
  return !find_word(caption, identifier).empty();
}

/// Fraction of captions that mention `identifier` at least once.
inline double recall_identifier(const std::vector<std::string>& captions, const std::string& identifier) {
  if (captions.empty()) throw InputError("recall over an empty caption list");
  if (identifier.empty()) throw InputError("identifier must not be empty");
  std::size_t hits = 0;
  for (const auto& c : captions) hits += mentions_identifier(c, identifier) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(captions.size());
}

/// Replaces every whole-word occurrence of `identifier` with `category`.
inline std::string substitute_identifier(const std::string& caption, const std::string& identifier,
                                         const std::string& category) {
  const auto hits = find_word(caption, identifier);
  std::string out;
  std::size_t prev = 0;
  for (std::size_t pos : hits) {
    out.append(caption, prev, pos - prev);
    out += category;
    prev = pos + identifier.size();
  }
  out.append(caption, prev, std::string::npos);
  return out;
}

struct KeywordReplacement {
  std::string caption;
  bool replaced = false;
};

/// Swaps the earliest keyword occurrence in `caption` for the identifier. When two
/// keywords start at the same offset the longer one wins.
inline KeywordReplacement keyword_replace_baseline(const std::string& caption, const std::vector<std::string>& keywords,
                                                   const std::string& identifier) {
  std::optional<std::pair<std::size_t, std::size_t>> best;  // (offset, length)
  for (const auto& k : keywords) {
    const auto hits = find_word(caption, k);
    if (hits.empty()) continue;
    const std::pair<std::size_t, std::size_t> cand{hits.front(), k.size()};
    if (!best || cand.first < best->first || (cand.first == best->first && cand.second > best->second)) best = cand;
  }
  if (!best) return {caption, false};
  std::string out = caption;
  out.replace(best->first, best->second, identifier);
  return {out, true};
}

/// Maps a sentence to a fixed-width vector for similarity scoring.
class SentenceEmbedder {
 public:
  virtual ~SentenceEmbedder() = default;
  virtual Vector embed(const std::string& sentence) const = 0;
};

/// L2-normalised term-frequency vector over a word list. Words outside the list
/// share the "<unk>" bucket when the list has one and are dropped otherwise.
class TfEmbedder final : public SentenceEmbedder {
 public:
  explicit TfEmbedder(std::vector<std::string> vocab) : vocab_(std::move(vocab)) {
    for (std::size_t i = 0; i < vocab_.size(); ++i) index_.emplace(to_lower(vocab_[i]), static_cast<int>(i));
    if (auto it = index_.find("<unk>"); it != index_.end()) unk_ = it->second;
  }

  Vector embed(const std::string& sentence) const override {
    Vector v = Vector::Zero(static_cast<Eigen::Index>(vocab_.size()));
    for (const auto& w : vlm::split_words(sentence)) {
      auto it = index_.find(w);
      const int id = it != index_.end() ? it->second : unk_;
      if (id >= 0) v(id) += 1.0;
    }
    const double n = v.norm();
    return n > 0 ? Vector(v / n) : v;
  }

  std::size_t dim() const { return vocab_.size(); }

 private:
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, int> index_;
  int unk_ = -1;
};

/// Cosine of the two sentence embeddings; 0 when either is the zero vector.
inline double sentence_similarity(const std::string& a, const std::string& b, const SentenceEmbedder& embedder) {
  return cosine_similarity(embedder.embed(a), embedder.embed(b));
}

/// Image/caption agreement score.
class ImageTextScorer {
 public:
  virtual ~ImageTextScorer() = default;
  virtual double score(const Image& image, const std::string& caption) const = 0;
};

/// Cosine between the toy encoder's summary token and a fixed random projection of
/// the caption's term-frequency vector. Only useful as a relative, deterministic
/// signal inside the synthetic world.
class ToyImageTextScorer final : public ImageTextScorer {
 public:
  ToyImageTextScorer(std::vector<std::string> vocab, vlm::EncoderConfig enc = {}, std::uint64_t seed = 11)
      : tf_(std::move(vocab)), encoder_(enc) {
    Rng rng(seed);
    map_ = rng.normal_matrix(enc.d_v, static_cast<Eigen::Index>(tf_.dim()), 1.0);
  }

  double score(const Image& image, const std::string& caption) const override {
    const Vector img = encoder_.encode(image).summary_token;
    const Vector txt = map_ * tf_.embed(caption);
    return cosine_similarity(img, txt);
  }

 private:
  TfEmbedder tf_;
  vlm::ToyEncoder encoder_;
  Matrix map_;
};

}  // namespace myconcept::eval
