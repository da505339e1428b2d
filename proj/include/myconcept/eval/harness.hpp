// Copyright 2026 The MyConcept Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "myconcept/eval/metrics.hpp"
#include "myconcept/heads/embedder.hpp"
#include "myconcept/heads/heads.hpp"
#include "myconcept/store/dataset.hpp"
#include "myconcept/trainer/trainer.hpp"

namespace myconcept::eval {

struct Fold {
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
  std::uint64_t seed = 0;
};

/// Random train/validation splits drawn without replacement; train ids keep the
/// order they have in `image_ids`.
inline std::vector<Fold> make_folds(const std::vector<std::string>& image_ids, int n_folds = 5, int train_size = 4,
                                    std::uint64_t seed = 0) {
  if (n_folds < 1) throw InputError("need at least one fold");
  if (train_size < 1) throw InputError("train size must be positive");
  if (image_ids.size() < static_cast<std::size_t>(train_size))
    throw InputError("only " + std::to_string(image_ids.size()) + " images for a training set of " +
                     std::to_string(train_size));
  Rng rng(seed);
  std::vector<Fold> folds;
  for (int f = 0; f < n_folds; ++f) {
    std::vector<std::size_t> perm(image_ids.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    std::vector<std::size_t> train(perm.begin(), perm.begin() + train_size);
    std::sort(train.begin(), train.end());
    Fold fold;
    fold.seed = seed;
    for (std::size_t i = 0; i < image_ids.size(); ++i) {
      if (std::binary_search(train.begin(), train.end(), i))
        fold.train_ids.push_back(image_ids[i]);
      else
        fold.val_ids.push_back(image_ids[i]);
    }
    folds.push_back(std::move(fold));
  }
  return folds;
}

struct EvalConfig {
  trainer::TrainingConfig training;
  /// Inject only when the concept's head fires on the validation image.
  bool use_heads = true;
  heads::HeadTrainConfig head;
  std::string instruction = "please caption this image";
  /// Baseline keywords per concept id; the category is used when absent.
  std::map<std::string, std::vector<std::string>> keywords;
  int threads = 1;
  std::uint64_t seed = 0;
};

struct SampleResult {
  std::string concept_id;
  int fold = 0;
  std::string image_id;
  std::string caption;
  std::string baseline_caption;
  bool head_fired = true;
  bool recalled = false;
  bool baseline_recalled = false;
  double text_similarity = 0;
  double image_similarity = 0;
};

struct FoldResult {
  std::string concept_id;
  std::string type;
  int fold = 0;
  std::size_t n_val = 0;
  double recall = 0;
  double baseline_recall = 0;
  double head_fire_rate = 0;
  double text_similarity = 0;
  double image_similarity = 0;
};

struct Aggregate {
  std::size_t n_samples = 0;
  std::size_t n_concepts = 0;
  /// Weighted by validation-sample count.
  double recall = 0;
  double baseline_recall = 0;
  double text_similarity = 0;
  double image_similarity = 0;
  /// Unweighted mean of per-concept means.
  double recall_per_concept = 0;
  double baseline_recall_per_concept = 0;
};

struct EvalReport {
  std::vector<FoldResult> folds;
  std::vector<SampleResult> samples;
  /// Keyed by "object", "person" and "all".
  std::map<std::string, Aggregate> aggregates;
};

/// Sample-weighted and per-concept means over the fold rows whose type is in `types`.
inline Aggregate aggregate_folds(const std::vector<FoldResult>& rows, const std::vector<std::string>& types) {
  Aggregate a;
  std::map<std::string, std::pair<double, double>> per_concept;  // recall sums, baseline sums
  std::map<std::string, std::size_t> per_concept_n;
  for (const auto& r : rows) {
    if (std::find(types.begin(), types.end(), r.type) == types.end()) continue;
    const double n = static_cast<double>(r.n_val);
    a.n_samples += r.n_val;
    a.recall += r.recall * n;
    a.baseline_recall += r.baseline_recall * n;
    a.text_similarity += r.text_similarity * n;
    a.image_similarity += r.image_similarity * n;
    per_concept[r.concept_id].first += r.recall * n;
    per_concept[r.concept_id].second += r.baseline_recall * n;
    per_concept_n[r.concept_id] += r.n_val;
  }
  if (a.n_samples == 0) return a;
  const double total = static_cast<double>(a.n_samples);
  a.recall /= total;
  a.baseline_recall /= total;
  a.text_similarity /= total;
  a.image_similarity /= total;
  a.n_concepts = per_concept.size();
  for (const auto& [id, sums] : per_concept) {
    const double n = static_cast<double>(per_concept_n[id]);
    a.recall_per_concept += sums.first / n;
    a.baseline_recall_per_concept += sums.second / n;
  }
  a.recall_per_concept /= static_cast<double>(a.n_concepts);
  a.baseline_recall_per_concept /= static_cast<double>(a.n_concepts);
  return a;
}

inline std::map<std::string, Aggregate> aggregate_report(const std::vector<FoldResult>& rows) {
  return {{"object", aggregate_folds(rows, {"object"})},
          {"person", aggregate_folds(rows, {"person"})},
          {"all", aggregate_folds(rows, {"object", "person"})}};
}

namespace detail {

inline std::size_t index_of(const store::ConceptDataset& ds, const std::string& image_id) {
  auto it = std::find(ds.image_ids.begin(), ds.image_ids.end(), image_id);
  if (it == ds.image_ids.end()) throw InputError("fold refers to unknown image '" + image_id + "'");
  return static_cast<std::size_t>(it - ds.image_ids.begin());
}

}  // namespace detail

/// Trains, detects, generates and scores every (concept, fold) pair. Identifiers
/// must already be registered with the model's tokenizer. Heads present in
/// `registry` are used as they are; otherwise a head is trained per fold from the
/// fold's training images (linear head) or face probes (gallery head).
inline EvalReport evaluate(const vlm::VlmBackend& model, const heads::HeadRegistry& registry,
                           const std::vector<store::ConceptDataset>& concepts,
                           const std::vector<std::vector<Fold>>& folds, const EvalConfig& cfg,
                           const SentenceEmbedder& embedder, const ImageTextScorer& scorer) {
  if (folds.size() != concepts.size()) throw InputError("need one fold list per concept");
  const heads::ColorAdjacencyEmbedder head_embedder;
  struct Task {
    std::size_t concept_index;
    int fold;
  };
  std::vector<Task> tasks;
  for (std::size_t c = 0; c < concepts.size(); ++c) {
    store::validate_dataset(concepts[c]);
    for (std::size_t f = 0; f < folds[c].size(); ++f) {
      if (folds[c][f].val_ids.empty())
        throw InputError("fold " + std::to_string(f) + " of " + concepts[c].concept_id + " has no validation images");
      tasks.push_back({c, static_cast<int>(f)});
    }
  }

  // Feature passes shared by every fold of a concept.
  std::vector<std::vector<Vector>> head_features(concepts.size()), negative_features(concepts.size());
  std::vector<std::vector<std::string>> baseline_captions(concepts.size());
  for (std::size_t c = 0; c < concepts.size(); ++c) {
    const auto& ds = concepts[c];
    for (const auto& img : ds.images) {
      if (cfg.use_heads) head_features[c].push_back(head_embedder.embed(img));
      baseline_captions[c].push_back(model.generate(model.encode_image(img), cfg.instruction, {}, {}).text);
    }
    const bool needs_negatives = cfg.use_heads && !registry.get(ds.concept_id) && ds.face_probes.empty();
    if (needs_negatives) {
      if (ds.negatives.empty()) throw ValidationError("linear head needs negative images", ds.concept_id);
      for (const auto& img : ds.negatives) negative_features[c].push_back(head_embedder.embed(img));
    }
  }

  std::vector<FoldResult> fold_rows(tasks.size());
  std::vector<std::vector<SampleResult>> sample_rows(tasks.size());
  auto run = [&](std::size_t t) {
    const auto& [c, f] = tasks[t];
    const auto& ds = concepts[c];
    const Fold& fold = folds[c][static_cast<std::size_t>(f)];
    std::vector<std::size_t> train_idx, val_idx;
    for (const auto& id : fold.train_ids) train_idx.push_back(detail::index_of(ds, id));
    for (const auto& id : fold.val_ids) val_idx.push_back(detail::index_of(ds, id));

    trainer::TrainingConfig tc = cfg.training;
    tc.instruction = cfg.instruction;
    tc.seed = cfg.seed + 1000 * c + static_cast<std::uint64_t>(f);
    const auto trained = trainer::optimize_embedding(model, trainer::samples_from_dataset(ds, train_idx),
                                                     ds.identifier, tc);

    std::optional<heads::ConceptHead> head;
    if (cfg.use_heads) {
      if (auto entry = registry.get(ds.concept_id)) {
        head = entry->head;
      } else if (!ds.face_probes.empty()) {
        std::vector<Vector> refs;
        for (std::size_t i : train_idx) refs.push_back(to_vector(ds.face_probes.at(i)));
        head = heads::GalleryHead(refs);
      } else {
        std::vector<Vector> pos;
        for (std::size_t i : train_idx) pos.push_back(head_features[c][i]);
        heads::HeadTrainConfig hc = cfg.head;
        hc.seed = tc.seed;
        head = heads::train_linear_head(pos, negative_features[c], hc);
      }
    }

    const auto keywords_it = cfg.keywords.find(ds.concept_id);
    const std::vector<std::string> keywords =
        keywords_it != cfg.keywords.end() ? keywords_it->second : std::vector<std::string>{ds.category};
    FoldResult row;
    row.concept_id = ds.concept_id;
    row.type = ds.type;
    row.fold = f;
    row.n_val = val_idx.size();
    for (std::size_t i : val_idx) {
      SampleResult s;
      s.concept_id = ds.concept_id;
      s.fold = f;
      s.image_id = ds.image_ids[i];
      if (head) {
        if (const auto* lin = std::get_if<heads::LinearHead>(&*head)) {
          s.head_fired = lin->fires(head_features[c][i]);
        } else {
          s.head_fired = std::get<heads::GalleryHead>(*head).match(to_vector(ds.face_probes.at(i))).matched;
        }
      }
      std::vector<vlm::InjectedConcept> injected;
      if (s.head_fired) injected.push_back({trained.embedding.vector, trained.embedding.identifier_token});
      s.caption = model.generate(model.encode_image(ds.images[i]), cfg.instruction, injected, {}).text;
      s.baseline_caption = keyword_replace_baseline(baseline_captions[c][i], keywords, ds.identifier).caption;
      s.recalled = mentions_identifier(s.caption, ds.identifier);
      s.baseline_recalled = mentions_identifier(s.baseline_caption, ds.identifier);
      const std::string generated = substitute_identifier(s.caption, ds.identifier, ds.category);
      const std::string target = store::fill_placeholder(ds.captions[i], ds.category);
      s.text_similarity = sentence_similarity(generated, target, embedder);
      s.image_similarity = scorer.score(ds.images[i], generated);
      row.recall += s.recalled ? 1 : 0;
      row.baseline_recall += s.baseline_recalled ? 1 : 0;
      row.head_fire_rate += s.head_fired ? 1 : 0;
      row.text_similarity += s.text_similarity;
      row.image_similarity += s.image_similarity;
      sample_rows[t].push_back(std::move(s));
    }
    const double n = static_cast<double>(row.n_val);
    row.recall /= n;
    row.baseline_recall /= n;
    row.head_fire_rate /= n;
    row.text_similarity /= n;
    row.image_similarity /= n;
    fold_rows[t] = row;
  };

  const int n_threads = std::max(1, std::min<int>(cfg.threads, static_cast<int>(tasks.size())));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t t = next++; t < tasks.size(); t = next++) {
      try {
        run(t);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int i = 1; i < n_threads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);

  EvalReport report;
  report.folds = std::move(fold_rows);
  for (auto& rows : sample_rows)
    for (auto& s : rows) report.samples.push_back(std::move(s));
  report.aggregates = aggregate_report(report.folds);
  return report;
}

inline nlohmann::json to_json(const Aggregate& a) {
  return {{"n_samples", a.n_samples},
          {"n_concepts", a.n_concepts},
          {"recall", a.recall},
          {"baseline_recall", a.baseline_recall},
          {"text_similarity", a.text_similarity},
          {"image_similarity", a.image_similarity},
          {"recall_per_concept", a.recall_per_concept},
          {"baseline_recall_per_concept", a.baseline_recall_per_concept}};
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["version"] = 1;
  j["folds"] = nlohmann::json::array();
  for (const auto& f : r.folds)
    j["folds"].push_back({{"concept_id", f.concept_id},
                          {"type", f.type},
                          {"fold", f.fold},
                          {"n_val", f.n_val},
                          {"recall", f.recall},
                          {"baseline_recall", f.baseline_recall},
                          {"head_fire_rate", f.head_fire_rate},
                          {"text_similarity", f.text_similarity},
                          {"image_similarity", f.image_similarity}});
  j["samples"] = nlohmann::json::array();
  for (const auto& s : r.samples)
    j["samples"].push_back({{"concept_id", s.concept_id},
                            {"fold", s.fold},
                            {"image_id", s.image_id},
                            {"caption", s.caption},
                            {"baseline_caption", s.baseline_caption},
                            {"head_fired", s.head_fired},
                            {"recalled", s.recalled},
                            {"baseline_recalled", s.baseline_recalled},
                            {"text_similarity", s.text_similarity},
                            {"image_similarity", s.image_similarity}});
  j["aggregates"] = nlohmann::json::object();
  for (const auto& [k, a] : r.aggregates) j["aggregates"][k] = to_json(a);
  return j;
}

/// Checks the layout emitted by to_json; returns the first problem found.
inline std::optional<std::string> check_report_schema(const nlohmann::json& j) {
  auto need = [](const nlohmann::json& obj, const std::string& key, nlohmann::json::value_t type,
                 const std::string& where) -> std::optional<std::string> {
    if (!obj.is_object() || !obj.contains(key)) return where + ": missing '" + key + "'";
    const auto t = obj.at(key).type();
    const bool numeric = type == nlohmann::json::value_t::number_float &&
                         (t == nlohmann::json::value_t::number_integer || t == nlohmann::json::value_t::number_unsigned);
    const bool unsigned_ok = type == nlohmann::json::value_t::number_integer && t == nlohmann::json::value_t::number_unsigned;
    if (t != type && !numeric && !unsigned_ok) return where + ": '" + key + "' has the wrong type";
    return std::nullopt;
  };
  using vt = nlohmann::json::value_t;
  if (auto e = need(j, "version", vt::number_integer, "report")) return e;
  if (auto e = need(j, "folds", vt::array, "report")) return e;
  if (auto e = need(j, "samples", vt::array, "report")) return e;
  if (auto e = need(j, "aggregates", vt::object, "report")) return e;
  for (const auto& f : j["folds"]) {
    for (const char* k : {"concept_id", "type"})
      if (auto e = need(f, k, vt::string, "fold")) return e;
    for (const char* k : {"fold", "n_val"})
      if (auto e = need(f, k, vt::number_integer, "fold")) return e;
    for (const char* k : {"recall", "baseline_recall", "head_fire_rate", "text_similarity", "image_similarity"}) {
      if (auto e = need(f, k, vt::number_float, "fold")) return e;
      const double v = f[k].get<double>();
      if ((std::string(k).find("recall") != std::string::npos || std::string(k) == "head_fire_rate") &&
          (v < 0 || v > 1))
        return std::string("fold: '") + k + "' outside [0, 1]";
    }
  }
  for (const auto& s : j["samples"]) {
    for (const char* k : {"concept_id", "image_id", "caption", "baseline_caption"})
      if (auto e = need(s, k, vt::string, "sample")) return e;
    for (const char* k : {"head_fired", "recalled", "baseline_recalled"})
      if (auto e = need(s, k, vt::boolean, "sample")) return e;
  }
  for (const char* group : {"object", "person", "all"}) {
    if (auto e = need(j["aggregates"], group, vt::object, "aggregates")) return e;
    for (const char* k : {"recall", "baseline_recall", "text_similarity", "image_similarity"})
      if (auto e = need(j["aggregates"][group], k, vt::number_float, group)) return e;
  }
  return std::nullopt;
}

/// One CSV row per (concept, fold).
inline void write_csv(const EvalReport& r, std::ostream& out) {
  out << "concept_id,type,fold,n_val,recall,baseline_recall,head_fire_rate,text_similarity,image_similarity\n";
  for (const auto& f : r.folds)
    out << f.concept_id << ',' << f.type << ',' << f.fold << ',' << f.n_val << ',' << f.recall << ','
        << f.baseline_recall << ',' << f.head_fire_rate << ',' << f.text_similarity << ',' << f.image_similarity
        << '\n';
}

}  // namespace myconcept::eval
