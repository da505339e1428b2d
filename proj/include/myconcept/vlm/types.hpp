// Copyright 2026 The MyConcept Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "myconcept/core/linalg.hpp"
#include "myconcept/vlm/encoder.hpp"

namespace myconcept::vlm {

enum class FusionMode { qformer, prefix };

inline std::string to_string(FusionMode m) { return m == FusionMode::qformer ? "qformer" : "prefix"; }
inline FusionMode fusion_mode_from_string(const std::string& s) {
  if (s == "qformer") return FusionMode::qformer;
  if (s == "prefix") return FusionMode::prefix;
  throw InputError("unknown fusion mode '" + s + "' (expected qformer or prefix)");
}

struct FusionConfig {
  FusionMode mode = FusionMode::qformer;
  int n_query_tokens = 32;
  int d = 32;
  int n_heads = 4;
  int n_layers = 2;

  int d_head() const { return d / n_heads; }
  /// Per-head scaling, 1/sqrt(d/n_heads).
  double scale() const { return 1.0 / std::sqrt(static_cast<double>(d_head())); }

  void validate() const {
    if (d <= 0 || n_heads <= 0 || n_layers <= 0) throw InputError("fusion sizes must be positive");
    if (d % n_heads != 0) throw InputError("d must be divisible by n_heads");
    if (mode == FusionMode::qformer && n_query_tokens <= 0) throw InputError("qformer mode needs query tokens");
  }
};

struct ModelConfig {
  FusionConfig fusion;
  EncoderConfig encoder;
  int decoder_layers = 2;
  int max_positions = 96;
  int mlp_ratio = 2;
  std::uint64_t seed = 0;
  std::vector<std::string> vocab;
  std::vector<int> name_slots;

  int d_v() const { return encoder.d_v; }
  /// Width of an injected concept vector: image-token space for qformer, decoder space for prefix.
  int concept_dim() const { return fusion.mode == FusionMode::qformer ? encoder.d_v : fusion.d; }
};

enum class KeyLabel { image, concept_token, query, language };

inline const char* to_string(KeyLabel k) {
  switch (k) {
    case KeyLabel::image: return "image";
    case KeyLabel::concept_token: return "concept";
    case KeyLabel::query: return "query";
    case KeyLabel::language: return "language";
  }
  return "?";
}

enum class AttentionStage { fusion, decoder };

/// Attention probabilities of one layer: probs[h] is n_queries × n_keys.
struct AttentionRecord {
  AttentionStage stage = AttentionStage::decoder;
  int layer = 0;
  std::vector<Matrix> probs;
  std::vector<KeyLabel> key_labels;
};

struct GenerationTrace {
  std::vector<int> tokens;
  std::string text;
  std::vector<AttentionRecord> attention_records;
  /// Row t holds the next-token logits at decoding step t (when requested).
  std::optional<Matrix> logits_history;
  /// Decoder rows occupied by the image prefix and injected concepts.
  int prefix_length = 0;
  std::vector<int> concept_positions;
};

/// A concept vector as fed into the frozen model.
struct InjectedConcept {
  Vector embedding;
  int identifier_token = -1;
};

enum class PenaltyForm {
  /// Per-query softmax over all keys (scaled), concept column, squared and summed.
  per_query,
  /// Softmax of the unscaled concept logits across queries, squared and summed.
  literal,
};

struct LossOptions {
  double lambda = 0.0;
  PenaltyForm penalty_form = PenaltyForm::per_query;
};

struct LossResult {
  double loss = 0;
  double ce = 0;
  double reg = 0;
  std::vector<Vector> gradients;
};

struct DecodeConfig {
  enum class Strategy { greedy, sample };
  Strategy strategy = Strategy::greedy;
  int max_new_tokens = 16;
  double temperature = 0.2;
  double top_p = 0.7;
  std::uint64_t seed = 0;
  bool keep_logits = false;
  bool keep_attention = true;
};

}  // namespace myconcept::vlm
