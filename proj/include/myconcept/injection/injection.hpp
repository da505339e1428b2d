// Copyright 2026 The MyConcept Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "myconcept/core/errors.hpp"
#include "myconcept/core/linalg.hpp"
#include "myconcept/vlm/model.hpp"

namespace myconcept::injection {

using vlm::AttentionRecord;
using vlm::GenerationTrace;
using vlm::KeyLabel;

struct AttentionResult {
  Matrix outputs;  // M × d
  Matrix probs;    // M × N
};

/// softmax(scale · Q Kᵀ) V, row by row.
inline AttentionResult cross_attend(const Matrix& queries, const Matrix& keys, const Matrix& values, double scale) {
  require_same_dim(queries.cols(), keys.cols(), "cross_attend key width");
  require_same_dim(keys.rows(), values.rows(), "cross_attend key/value count");
  if (keys.rows() == 0) throw DimensionError("cross_attend needs at least one key");
  if (!(scale > 0)) throw InputError("attention scale must be positive");
  AttentionResult r;
  r.probs = ad::softmax_rows_value(scale * queries * keys.transpose());
  r.outputs = r.probs * values;
  return r;
}

/// Rescales `v` to norm `target`, keeping its direction.
inline Vector rescale_to_norm(const Vector& v, double target) {
  const double n = v.norm();
  if (!(n > 0)) throw DegenerateInputError("cannot rescale a zero-norm vector");
  return v * (target / n);
}

inline double mean_row_norm(const Matrix& m) {
  if (m.rows() == 0) throw DimensionError("mean norm of an empty matrix");
  return m.rowwise().norm().mean();
}

/// Concept key/value brought to the mean norm of the original keys/values.
inline std::pair<Vector, Vector> match_norms(const Vector& k_star, const Vector& v_star, const Matrix& keys,
                                             const Matrix& values) {
  require_same_dim(keys.cols(), k_star.size(), "match_norms key width");
  require_same_dim(values.cols(), v_star.size(), "match_norms value width");
  if (keys.rows() < 1 || values.rows() < 1) throw DimensionError("match_norms needs at least one original key");
  return {rescale_to_norm(k_star, mean_row_norm(keys)), rescale_to_norm(v_star, mean_row_norm(values))};
}

/// Per-head variant: head h owns columns [h·d_h, (h+1)·d_h).
inline std::pair<Vector, Vector> match_norms_per_head(const Vector& k_star, const Vector& v_star, const Matrix& keys,
                                                      const Matrix& values, int n_heads) {
  require_same_dim(keys.cols(), k_star.size(), "match_norms key width");
  require_same_dim(values.cols(), v_star.size(), "match_norms value width");
  if (n_heads <= 0 || keys.cols() % n_heads != 0 || values.cols() % n_heads != 0)
    throw DimensionError("width must be divisible by the head count");
  const Eigen::Index dk = keys.cols() / n_heads;
  const Eigen::Index dv = values.cols() / n_heads;
  Vector k(k_star.size()), v(v_star.size());
  for (int h = 0; h < n_heads; ++h) {
    auto [kh, vh] = match_norms(k_star.segment(h * dk, dk), v_star.segment(h * dv, dv), keys.middleCols(h * dk, dk),
                                values.middleCols(h * dv, dv));
    k.segment(h * dk, dk) = kh;
    v.segment(h * dv, dv) = vh;
  }
  return {k, v};
}

/// Σ_i p_i² where p_i is query i's attention probability on the concept key.
/// Passing a -inf logit masks a key.
inline double concept_attention_penalty(const Matrix& queries, const Matrix& keys_with_concept, int concept_index,
                                        double scale) {
  require_same_dim(queries.cols(), keys_with_concept.cols(), "penalty key width");
  if (concept_index < 0 || concept_index >= keys_with_concept.rows())
    throw InputError("concept index " + std::to_string(concept_index) + " out of range");
  const Matrix probs = ad::softmax_rows_value(scale * queries * keys_with_concept.transpose());
  return probs.col(concept_index).squaredNorm();
}

/// Same quantity from precomputed logits, with an optional key mask.
inline double concept_attention_penalty_from_logits(const Matrix& logits, int concept_index,
                                                    const ad::BoolMatrix* mask = nullptr) {
  if (concept_index < 0 || concept_index >= logits.cols()) throw InputError("concept index out of range");
  return ad::softmax_rows_value(logits, mask).col(concept_index).squaredNorm();
}

/// The regulariser as it is sometimes written: concept logits normalised across
/// queries rather than across keys, unscaled.
inline double concept_attention_penalty_literal(const Matrix& queries, const Vector& concept_key) {
  require_same_dim(queries.cols(), concept_key.size(), "penalty key width");
  const Matrix logits = (queries * concept_key).transpose();
  return ad::softmax_rows_value(logits).squaredNorm();
}

/// Concept vector rescaled to the summary-token norm, for prefix injection.
inline Vector prefix_rescale(const Vector& e, const Vector& summary_token) {
  const double s = summary_token.norm();
  if (!(s > 0)) throw DegenerateInputError("summary token has zero norm");
  return rescale_to_norm(e, s);
}

/// Mean over (record, head, query row not in `concept_positions`) of the squared
/// probability each row assigns to the concept positions.
inline double prefix_attention_penalty(const std::vector<AttentionRecord>& records,
                                       const std::vector<int>& concept_positions) {
  double total = 0;
  std::size_t count = 0;
  for (const auto& rec : records) {
    for (const Matrix& p : rec.probs) {
      for (int cp : concept_positions)
        if (cp < 0 || cp >= p.cols() || cp >= p.rows()) throw InputError("concept position out of range");
      for (Eigen::Index i = 0; i < p.rows(); ++i) {
        if (std::find(concept_positions.begin(), concept_positions.end(), static_cast<int>(i)) !=
            concept_positions.end())
          continue;
        for (int cp : concept_positions) total += p(i, cp) * p(i, cp);
        ++count;
      }
    }
  }
  if (count == 0) return 0.0;
  return total / static_cast<double>(count);
}

struct AttentionMap {
  int grid_height = 0;
  int grid_width = 0;
  std::vector<double> weights;  // row-major, one per patch
};

/// Attention paid by the concept row to each image patch at decoder layer `layer`,
/// averaged over heads.
inline AttentionMap extract_concept_attention_map(const GenerationTrace& trace, int concept_position, int layer,
                                                  int grid_height, int grid_width) {
  const AttentionRecord* rec = nullptr;
  for (const auto& r : trace.attention_records)
    if (r.stage == vlm::AttentionStage::decoder && r.layer == layer) rec = &r;
  if (rec == nullptr) throw InputError("trace has no decoder layer " + std::to_string(layer));
  std::vector<int> patches;
  for (std::size_t j = 0; j < rec->key_labels.size(); ++j)
    if (rec->key_labels[j] == KeyLabel::image) patches.push_back(static_cast<int>(j));
  if (patches.empty()) throw InputError("trace carries no image-token keys (prefix mode required)");
  if (static_cast<int>(patches.size()) != grid_height * grid_width)
    throw DimensionError("patch grid does not match the number of image tokens");
  if (rec->probs.empty()) throw InputError("trace carries no attention probabilities");
  if (concept_position < 0 || concept_position >= rec->probs.front().rows())
    throw InputError("concept position out of range");
  AttentionMap map{grid_height, grid_width, std::vector<double>(patches.size(), 0.0)};
  for (const Matrix& p : rec->probs)
    for (std::size_t k = 0; k < patches.size(); ++k) map.weights[k] += p(concept_position, patches[k]);
  for (double& w : map.weights) w /= static_cast<double>(rec->probs.size());
  return map;
}

/// Average attention probability that query rows put on injected concept keys,
/// over every recorded layer and head that has such keys. Decoder rows that hold a
/// concept themselves are left out. Returns 0 when nothing was injected.
inline double concept_attention_mass(const GenerationTrace& trace) {
  double total = 0;
  std::size_t count = 0;
  for (const auto& rec : trace.attention_records) {
    std::vector<Eigen::Index> cols;
    for (std::size_t j = 0; j < rec.key_labels.size(); ++j)
      if (rec.key_labels[j] == KeyLabel::concept_token) cols.push_back(static_cast<Eigen::Index>(j));
    if (cols.empty()) continue;
    for (const Matrix& p : rec.probs) {
      double head_sum = 0;
      std::size_t rows = 0;
      for (Eigen::Index i = 0; i < p.rows(); ++i) {
        if (rec.stage == vlm::AttentionStage::decoder &&
            std::find(trace.concept_positions.begin(), trace.concept_positions.end(), static_cast<int>(i)) !=
                trace.concept_positions.end())
          continue;
        for (Eigen::Index c : cols) head_sum += p(i, c);
        ++rows;
      }
      if (rows == 0) continue;
      total += head_sum / static_cast<double>(rows);
      ++count;
    }
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

}  // namespace myconcept::injection
