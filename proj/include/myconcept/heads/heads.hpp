// Copyright 2026 The MyConcept Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <variant>
#include <vector>

#include "myconcept/core/linalg.hpp"
#include "myconcept/core/random.hpp"
#include "myconcept/optim/adamw.hpp"
#include "myconcept/vlm/encoder.hpp"

namespace myconcept::heads {

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

struct HeadTrainConfig {
  int steps = 500;
  int batch = 16;
  double lr = 1e-3;
  double weight_decay = 0.01;
  double threshold = 0.5;
  /// Positives per batch; drawn with replacement so a batch is never all-negative.
  int positives_per_batch = 8;
  /// Training AUC below this raises the quality warning.
  double min_auc = 0.75;
  std::uint64_t seed = 0;
};

struct LinearHead {
  Vector weights;
  double bias = 0;
  double threshold = 0.5;
  std::size_t trained_pos = 0;
  std::size_t trained_neg = 0;
  double training_auc = 1.0;
  bool quality_warning = false;

  double logit(const Vector& x) const {
    require_same_dim(weights.size(), x.size(), "linear head input");
    return weights.dot(x) + bias;
  }
  double score(const Vector& x) const { return sigmoid(logit(x)); }
  bool fires(const Vector& x) const { return score(x) >= threshold; }
};

inline double score(const LinearHead& head, const Vector& x) { return head.score(x); }

/// Area under the ROC curve by pairwise comparison; ties count one half.
inline double roc_auc(const std::vector<double>& pos, const std::vector<double>& neg) {
  if (pos.empty() || neg.empty()) throw InputError("AUC needs both classes");
  double wins = 0;
  for (double p : pos)
    for (double n : neg) wins += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
  return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

namespace detail {
inline void check_set(const std::vector<Vector>& xs, Eigen::Index dim, const char* what) {
  for (const auto& x : xs) {
    require_same_dim(dim, x.size(), what);
    if (!x.allFinite()) throw InputError(std::string(what) + " contains non-finite values");
  }
}
}  // namespace detail

/// Logistic probe trained with binary cross entropy, AdamW and a cosine schedule on
/// class-balanced batches.
inline LinearHead train_linear_head(const std::vector<Vector>& pos, const std::vector<Vector>& neg,
                                    const HeadTrainConfig& cfg = {}) {
  if (pos.empty() || neg.empty()) throw InputError("linear head needs at least one positive and one negative");
  if (cfg.batch < 2 || cfg.positives_per_batch < 1 || cfg.positives_per_batch >= cfg.batch)
    throw InputError("batch must hold at least one positive and one negative");
  if (!(cfg.threshold > 0 && cfg.threshold < 1)) throw InputError("threshold must lie in (0, 1)");
  const Eigen::Index dim = pos.front().size();
  detail::check_set(pos, dim, "positive embeddings");
  detail::check_set(neg, dim, "negative embeddings");

  Rng rng(cfg.seed);
  Matrix w = Matrix::Zero(dim, 1);
  Matrix b = Matrix::Zero(1, 1);
  optim::AdamW opt({cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
  const int n_pos = cfg.positives_per_batch;
  Matrix x(cfg.batch, dim);
  Vector y(cfg.batch);
  for (int step = 0; step < cfg.steps; ++step) {
    for (int i = 0; i < cfg.batch; ++i) {
      const bool is_pos = i < n_pos;
      x.row(i) = is_pos ? pos[rng.index(pos.size())].transpose() : neg[rng.index(neg.size())].transpose();
      y(i) = is_pos ? 1.0 : 0.0;
    }
    const Vector z = (x * w).col(0).array() + b(0, 0);
    Vector resid(cfg.batch);
    for (int i = 0; i < cfg.batch; ++i) resid(i) = sigmoid(z(i)) - y(i);
    resid /= static_cast<double>(cfg.batch);
    Matrix gw = x.transpose() * resid;
    Matrix gb(1, 1);
    gb(0, 0) = resid.sum();
    opt.step({&w, &b}, {gw, gb}, optim::cosine_lr(cfg.lr, step, cfg.steps));
  }

  LinearHead head;
  head.weights = w.col(0);
  head.bias = b(0, 0);
  head.threshold = cfg.threshold;
  head.trained_pos = pos.size();
  head.trained_neg = neg.size();
  std::vector<double> sp, sn;
  for (const auto& p : pos) sp.push_back(head.logit(p));
  for (const auto& n : neg) sn.push_back(head.logit(n));
  head.training_auc = roc_auc(sp, sn);
  head.quality_warning = head.training_auc < cfg.min_auc;
  return head;
}

inline constexpr double kDefaultGalleryThreshold = 0.675;

struct GalleryMatch {
  bool matched = false;
  double min_distance = 0;
};

/// Recognition by cosine distance to a set of stored reference vectors.
class GalleryHead {
 public:
  GalleryHead() = default;
  GalleryHead(const std::vector<Vector>& references, double threshold = kDefaultGalleryThreshold)
      : threshold_(threshold) {
    if (references.empty()) throw InputError("gallery head needs at least one reference");
    if (!(threshold > 0)) throw InputError("gallery threshold must be positive");
    const Eigen::Index dim = references.front().size();
    for (const auto& r : references) {
      require_same_dim(dim, r.size(), "gallery reference");
      const double n = r.norm();
      if (!(n > 0) || !r.allFinite()) throw InputError("gallery references must be finite and non-zero");
      refs_.push_back(r / n);
    }
  }

  /// Adopts references that are already unit length (±1e-6) without renormalising
  /// them, so stored heads reload bit-for-bit.
  static GalleryHead from_unit_references(std::vector<Vector> references, double threshold) {
    if (references.empty()) throw InputError("gallery head needs at least one reference");
    if (!(threshold > 0)) throw InputError("gallery threshold must be positive");
    for (const auto& r : references) {
      require_same_dim(references.front().size(), r.size(), "gallery reference");
      if (!r.allFinite() || std::abs(r.norm() - 1.0) > 1e-6) throw InputError("gallery reference is not unit length");
    }
    GalleryHead h;
    h.refs_ = std::move(references);
    h.threshold_ = threshold;
    return h;
  }

  const std::vector<Vector>& references() const { return refs_; }
  double threshold() const { return threshold_; }
  std::string metric() const { return "cosine"; }
  Eigen::Index dim() const { return refs_.empty() ? 0 : refs_.front().size(); }

  /// matched ⇔ min over references of (1 − cos) ≤ threshold.
  GalleryMatch match(const Vector& probe) const {
    if (refs_.empty()) throw InputError("gallery head has no references");
    require_same_dim(dim(), probe.size(), "gallery probe");
    const double n = probe.norm();
    if (!(n > 0) || !probe.allFinite()) throw InputError("gallery probe must be finite and non-zero");
    const Vector unit = probe / n;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& r : refs_) best = std::min(best, 1.0 - r.dot(unit));
    return {best <= threshold_, best};
  }

 private:
  std::vector<Vector> refs_;
  double threshold_ = kDefaultGalleryThreshold;
};

inline GalleryMatch gallery_match(const GalleryHead& head, const Vector& probe) { return head.match(probe); }

using ConceptHead = std::variant<LinearHead, GalleryHead>;

struct Detection {
  std::string concept_id;
  /// Probability for linear heads, 1 − distance for gallery heads.
  double score = 0;
  std::optional<double> distance;
  bool fired = false;
};

struct HeadEntry {
  ConceptHead head;
  std::string identifier;
};

/// All concept heads over one shared frozen embedder.
class HeadRegistry {
 public:
  explicit HeadRegistry(std::string embedder_id = {}) : embedder_id_(std::move(embedder_id)) {}
  HeadRegistry(const HeadRegistry& o) {
    std::shared_lock lock(o.mutex_);
    embedder_id_ = o.embedder_id_;
    entries_ = o.entries_;
  }

  const std::string& embedder_id() const { return embedder_id_; }

  void add(const std::string& concept_id, HeadEntry entry) {
    std::unique_lock lock(mutex_);
    if (!entries_.emplace(concept_id, std::move(entry)).second)
      throw InputError("concept '" + concept_id + "' already has a head");
  }
  void put(const std::string& concept_id, HeadEntry entry) {
    std::unique_lock lock(mutex_);
    entries_.insert_or_assign(concept_id, std::move(entry));
  }
  bool remove(const std::string& concept_id) {
    std::unique_lock lock(mutex_);
    return entries_.erase(concept_id) > 0;
  }
  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return entries_.size();
  }
  std::optional<HeadEntry> get(const std::string& concept_id) const {
    std::shared_lock lock(mutex_);
    auto it = entries_.find(concept_id);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  /// Scores every head on one shared feature pass. Gallery heads use the closest
  /// of `face_probes`. Sorted by score, highest first; ties by concept id.
  std::vector<Detection> detect(const vlm::VisionFeatures& features,
                                const std::vector<Vector>& face_probes = {}) const {
    std::shared_lock lock(mutex_);
    if (entries_.empty()) return {};
    if (features.source_id != embedder_id_)
      throw InputError("features come from '" + features.source_id + "', registry expects '" + embedder_id_ + "'");
    std::vector<Detection> out;
    for (const auto& [id, entry] : entries_) {
      Detection d;
      d.concept_id = id;
      if (const auto* lin = std::get_if<LinearHead>(&entry.head)) {
        d.score = lin->score(features.summary_token);
        d.fired = d.score >= lin->threshold;
      } else {
        const auto& gal = std::get<GalleryHead>(entry.head);
        double best = std::numeric_limits<double>::infinity();
        for (const auto& probe : face_probes) best = std::min(best, gal.match(probe).min_distance);
        if (std::isfinite(best)) {
          d.distance = best;
          d.score = 1.0 - best;
          d.fired = best <= gal.threshold();
        }
      }
      out.push_back(std::move(d));
    }
    std::stable_sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
    return out;
  }

  std::vector<std::string> concept_ids() const {
    std::shared_lock lock(mutex_);
    std::vector<std::string> ids;
    for (const auto& kv : entries_) ids.push_back(kv.first);
    return ids;
  }

 private:
  mutable std::shared_mutex mutex_;
  std::string embedder_id_;
  std::map<std::string, HeadEntry> entries_;
};

inline std::vector<Detection> detect_concepts(const HeadRegistry& registry, const vlm::VisionFeatures& features,
                                              const std::vector<Vector>& face_probes = {}) {
  return registry.detect(features, face_probes);
}

struct Neighbor {
  std::size_t index = 0;
  double similarity = 0;
};

/// Top-k corpus entries by cosine similarity; ties keep corpus order.
inline std::vector<Neighbor> nearest_neighbors(const Vector& query, const std::vector<Vector>& corpus, std::size_t k) {
  std::vector<Neighbor> all;
  for (std::size_t i = 0; i < corpus.size(); ++i) all.push_back({i, cosine_similarity(query, corpus[i])});
  std::stable_sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) { return a.similarity > b.similarity; });
  if (all.size() > k) all.resize(k);
  return all;
}

struct PcaResult {
  Matrix points;  // n × out_dim
  Vector explained_variance_ratio;
  Matrix components;  // out_dim × d
  Vector mean;
};

/// Principal components via SVD of the centred data.
inline PcaResult pca_project(const std::vector<Vector>& embeddings, int out_dim = 2) {
  if (embeddings.size() < 2) throw InputError("PCA needs at least two points");
  const Eigen::Index d = embeddings.front().size();
  if (out_dim < 1 || out_dim > d) throw InputError("PCA output dimension out of range");
  Matrix x(static_cast<Eigen::Index>(embeddings.size()), d);
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    require_same_dim(d, embeddings[i].size(), "PCA input");
    x.row(static_cast<Eigen::Index>(i)) = embeddings[i].transpose();
  }
  PcaResult r;
  r.mean = x.colwise().mean().transpose();
  x.rowwise() -= r.mean.transpose();
  Eigen::BDCSVD<Matrix> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& s = svd.singularValues();
  const double total = s.squaredNorm();
  const Eigen::Index k = std::min<Eigen::Index>(out_dim, s.size());
  r.components = svd.matrixV().leftCols(k).transpose();
  r.points = x * r.components.transpose();
  r.explained_variance_ratio = Vector::Zero(out_dim);
  if (total > 0) r.explained_variance_ratio.head(k) = s.head(k).array().square() / total;
  if (k < out_dim) {
    Matrix padded = Matrix::Zero(r.points.rows(), out_dim);
    padded.leftCols(k) = r.points;
    r.points = padded;
  }
  return r;
}

}  // namespace myconcept::heads
