// Copyright 2026 The MyConcept Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cctype>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "myconcept/core/errors.hpp"

namespace myconcept::vlm {

inline constexpr int kPad = 0;
inline constexpr int kUnk = 1;
inline constexpr int kBos = 2;
inline constexpr int kEos = 3;

/// Lower-cases and splits on whitespace; `?`, `.`, `,` and `!` become tokens of their own.
inline std::vector<std::string> split_words(const std::string& text) {
  std::string spaced;
  spaced.reserve(text.size() + 8);
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (ch == '?' || ch == '.' || ch == ',' || ch == '!') {
      spaced += ' ';
      spaced += ch;
      spaced += ' ';
    } else {
      spaced += static_cast<char>(std::tolower(c));
    }
  }
  std::istringstream in(spaced);
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  return words;
}

/// Word-level vocabulary. A contiguous block of "name slots" was trained as proper
/// names; identifiers claim a slot when a concept is created. Thread-safe.
class Tokenizer {
 public:
  Tokenizer() = default;
  Tokenizer(std::vector<std::string> words, std::vector<int> name_slots)
      : words_(std::move(words)), name_slots_(std::move(name_slots)) {
    rebuild_index();
  }
  Tokenizer(const Tokenizer& other) {
    std::shared_lock lock(other.mutex_);
    words_ = other.words_;
    name_slots_ = other.name_slots_;
    claimed_ = other.claimed_;
    index_ = other.index_;
  }
  Tokenizer& operator=(const Tokenizer& other) {
    if (this == &other) return *this;
    Tokenizer copy(other);
    std::unique_lock lock(mutex_);
    words_ = std::move(copy.words_);
    name_slots_ = std::move(copy.name_slots_);
    claimed_ = std::move(copy.claimed_);
    index_ = std::move(copy.index_);
    return *this;
  }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return words_.size();
  }

  std::optional<int> find(const std::string& word) const {
    std::shared_lock lock(mutex_);
    auto it = index_.find(word);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  /// Throws TokenizerError naming the first out-of-vocabulary word.
  std::vector<int> encode(const std::string& text) const {
    std::shared_lock lock(mutex_);
    std::vector<int> ids;
    for (const auto& w : split_words(text)) {
      auto it = index_.find(w);
      if (it == index_.end()) throw TokenizerError("unknown token '" + w + "'", w);
      ids.push_back(it->second);
    }
    return ids;
  }

  std::string decode(const std::vector<int>& ids) const {
    std::shared_lock lock(mutex_);
    std::string out;
    for (int id : ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) throw InputError("token id out of range");
      if (!out.empty()) out += ' ';
      out += words_[static_cast<std::size_t>(id)];
    }
    return out;
  }

  std::string word(int id) const {
    std::shared_lock lock(mutex_);
    return words_.at(static_cast<std::size_t>(id));
  }

  bool is_name_slot(int id) const {
    std::shared_lock lock(mutex_);
    return std::find(name_slots_.begin(), name_slots_.end(), id) != name_slots_.end();
  }

  /// Maps `identifier` onto a single token. A slot already spelled that way is reused;
  /// otherwise the first unclaimed slot is renamed. Ordinary words are rejected.
  int register_identifier(const std::string& identifier) {
    const auto parts = split_words(identifier);
    if (parts.size() != 1 || parts[0] != identifier)
      throw InputError("identifier must be a single lower-case word: '" + identifier + "'");
    std::unique_lock lock(mutex_);
    if (auto it = index_.find(identifier); it != index_.end()) {
      const int id = it->second;
      if (std::find(name_slots_.begin(), name_slots_.end(), id) == name_slots_.end())
        throw InputError("identifier '" + identifier + "' collides with a vocabulary word");
      claimed_.insert(id);
      return id;
    }
    for (int slot : name_slots_) {
      if (claimed_.count(slot)) continue;
      index_.erase(words_[static_cast<std::size_t>(slot)]);
      words_[static_cast<std::size_t>(slot)] = identifier;
      index_[identifier] = slot;
      claimed_.insert(slot);
      return slot;
    }
    throw InputError("no free identifier slots left");
  }

  /// Re-binds a stored identifier to the slot it was trained on.
  void claim_slot(const std::string& identifier, int slot) {
    std::unique_lock lock(mutex_);
    if (std::find(name_slots_.begin(), name_slots_.end(), slot) == name_slots_.end())
      throw InputError("token " + std::to_string(slot) + " is not an identifier slot");
    const std::string& current = words_[static_cast<std::size_t>(slot)];
    if (current == identifier) {
      claimed_.insert(slot);
      return;
    }
    if (claimed_.count(slot)) throw InputError("identifier slot already taken by '" + current + "'");
    if (index_.count(identifier)) throw InputError("identifier '" + identifier + "' is already bound");
    index_.erase(current);
    words_[static_cast<std::size_t>(slot)] = identifier;
    index_[identifier] = slot;
    claimed_.insert(slot);
  }

  std::vector<std::string> words() const {
    std::shared_lock lock(mutex_);
    return words_;
  }
  const std::vector<int>& name_slots() const { return name_slots_; }

 private:
  void rebuild_index() {
    index_.clear();
    for (std::size_t i = 0; i < words_.size(); ++i) {
      if (!index_.emplace(words_[i], static_cast<int>(i)).second)
        throw InputError("duplicate vocabulary word '" + words_[i] + "'");
    }
  }

  mutable std::shared_mutex mutex_;
  std::vector<std::string> words_;
  std::vector<int> name_slots_;
  std::set<int> claimed_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace myconcept::vlm
