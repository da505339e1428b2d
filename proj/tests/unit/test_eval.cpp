// Copyright 2026 The MyConcept Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <set>
#include <sstream>

#include "myconcept/eval/harness.hpp"
#include "myconcept/eval/metrics.hpp"
#include "myconcept/vlm/checkpoint.hpp"
#include "myconcept/vlm/pretrain.hpp"

namespace {

using namespace myconcept;
using namespace myconcept::eval;

TEST(Metrics, WholeWordCaseInsensitiveMatching) {
  EXPECT_EQ(find_word("Sks and sks, SKS!", "sks"), (std::vector<std::size_t>{0, 8, 13}));
  EXPECT_TRUE(find_word("sksx tasks", "sks").empty());
  EXPECT_TRUE(mentions_identifier("a photo of <sks>", "sks"));
  EXPECT_FALSE(mentions_identifier("", "sks"));
}

TEST(Metrics, RecallCountsCaptionsNotOccurrences) {
  EXPECT_DOUBLE_EQ(recall_identifier({"sks sks", "a mug", "Sks here", "x"}, "sks"), 0.5);
  EXPECT_THROW(recall_identifier({}, "sks"), InputError);
  EXPECT_THROW(recall_identifier({"a"}, ""), InputError);
}

TEST(Metrics, SubstituteReplacesEveryOccurrence) {
  EXPECT_EQ(substitute_identifier("sks sat by sks.", "sks", "mug"), "mug sat by mug.");
  EXPECT_EQ(substitute_identifier("tasks", "sks", "mug"), "tasks");
}

TEST(Metrics, KeywordBaselineTakesEarliestThenLongest) {
  auto r = keyword_replace_baseline("a red coffee mug next to a mug", {"mug", "coffee mug"}, "sks");
  EXPECT_TRUE(r.replaced);
  EXPECT_EQ(r.caption, "a red sks next to a mug");
  r = keyword_replace_baseline("the cat sleeps", {"dog"}, "sks");
  EXPECT_FALSE(r.replaced);
  EXPECT_EQ(r.caption, "the cat sleeps");
  EXPECT_EQ(keyword_replace_baseline("Dog and dog", {"dog"}, "bob").caption, "bob and dog");
}

TEST(Metrics, TfSimilarity) {
  const TfEmbedder e({"<unk>", "a", "red", "mug"});
  EXPECT_NEAR(sentence_similarity("a red mug", "mug red a", e), 1.0, 1e-15);
  EXPECT_NEAR(sentence_similarity("a", "mug", e), 0.0, 1e-15);
  EXPECT_NEAR(e.embed("zebra").norm(), 1.0, 1e-15);
  const TfEmbedder no_unk({"a"});
  EXPECT_EQ(sentence_similarity("zebra", "a", no_unk), 0.0);
}

TEST(Metrics, ToyImageTextScorerIsBoundedAndDeterministic) {
  const ToyImageTextScorer s({"<unk>", "red", "square", "gray", "background"});
  Image img(32, 32, 0.5);
  const double a = s.score(img, "red square");
  EXPECT_EQ(a, s.score(img, "red square"));
  EXPECT_LE(std::abs(a), 1.0);
}

TEST(Folds, DisjointAndSeeded) {
  std::vector<std::string> ids;
  for (int i = 0; i < 10; ++i) ids.push_back("img" + std::to_string(i));
  const auto folds = make_folds(ids, 5, 4, 7);
  ASSERT_EQ(folds.size(), 5u);
  for (const auto& f : folds) {
    EXPECT_EQ(f.train_ids.size(), 4u);
    EXPECT_EQ(f.val_ids.size(), 6u);
    std::set<std::string> all(f.train_ids.begin(), f.train_ids.end());
    all.insert(f.val_ids.begin(), f.val_ids.end());
    EXPECT_EQ(all.size(), 10u);
    EXPECT_TRUE(std::is_sorted(f.train_ids.begin(), f.train_ids.end()));
  }
  const auto again = make_folds(ids, 5, 4, 7);
  for (std::size_t i = 0; i < folds.size(); ++i) EXPECT_EQ(folds[i].train_ids, again[i].train_ids);
  EXPECT_THROW(make_folds(ids, 5, 11, 0), InputError);
}

TEST(Aggregates, WeightedAndPerConceptMeans) {
  std::vector<FoldResult> rows = {{"a", "object", 0, 6, 1.0, 0.0, 1, 0.5, 0.1},
                                  {"a", "object", 1, 2, 0.0, 0.5, 1, 0.5, 0.1},
                                  {"p", "person", 0, 2, 0.5, 0.0, 1, 0.2, 0.0}};
  const auto agg = aggregate_report(rows);
  EXPECT_NEAR(agg.at("object").recall, 6.0 / 8.0, 1e-15);
  EXPECT_NEAR(agg.at("object").recall_per_concept, 6.0 / 8.0, 1e-15);
  EXPECT_NEAR(agg.at("all").recall, 7.0 / 10.0, 1e-15);
  EXPECT_EQ(agg.at("all").n_concepts, 2u);
  EXPECT_EQ(agg.at("person").n_samples, 2u);
}

TEST(Harness, ShortRunProducesAValidReport) {
  const auto path = std::filesystem::path(MYCONCEPT_MODEL_DIR) / "prefix.tvlm";
  if (!std::filesystem::exists(path)) GTEST_SKIP() << "missing " << path;
  vlm::ToyVlm model = vlm::load_model(path);
  store::SuiteOptions so;
  so.n_concepts = 2;
  so.images_per_concept = 5;
  so.n_negatives = 30;
  so.n_people = 1;
  const auto suite = store::generate_synthetic_suite(so);
  for (const auto& ds : suite.concepts) model.tokenizer().register_identifier(ds.identifier);
  EvalConfig cfg;
  cfg.training = trainer::TrainingConfig::toy(model.mode());
  cfg.training.steps = 20;
  cfg.head.steps = 100;
  cfg.threads = 2;
  std::vector<std::vector<Fold>> folds;
  for (const auto& ds : suite.concepts) folds.push_back(make_folds(ds.image_ids, 2, 3, 1));
  const auto words = model.tokenizer().words();
  const TfEmbedder emb(words);
  const ToyImageTextScorer scorer(words);
  const auto report = evaluate(model, heads::HeadRegistry{}, suite.concepts, folds, cfg, emb, scorer);
  EXPECT_EQ(report.folds.size(), 4u);
  EXPECT_EQ(report.samples.size(), 8u);
  const auto j = to_json(report);
  EXPECT_EQ(check_report_schema(j), std::nullopt);
  auto broken = j;
  broken["folds"][0].erase("recall");
  EXPECT_TRUE(check_report_schema(broken).has_value());
  std::ostringstream csv;
  write_csv(report, csv);
  const std::string rows = csv.str();
  EXPECT_EQ(std::count(rows.begin(), rows.end(), '\n'), 5);

  // The same seeds give the same captions with one thread.
  cfg.threads = 1;
  const auto again = evaluate(model, heads::HeadRegistry{}, suite.concepts, folds, cfg, emb, scorer);
  for (std::size_t i = 0; i < report.samples.size(); ++i) EXPECT_EQ(report.samples[i].caption, again.samples[i].caption);
}

TEST(Harness, RejectsMismatchedFolds) {
  const vlm::ToyVlm model = vlm::ToyVlm::random(vlm::default_model_config(vlm::FusionMode::prefix));
  store::SuiteOptions so;
  so.n_concepts = 1;
  so.images_per_concept = 3;
  so.n_negatives = 2;
  const auto suite = store::generate_synthetic_suite(so);
  const TfEmbedder emb({"a"});
  const ToyImageTextScorer scorer({"a"});
  EXPECT_THROW(evaluate(model, heads::HeadRegistry{}, suite.concepts, {}, EvalConfig{}, emb, scorer), InputError);
  std::vector<std::vector<Fold>> folds = {{Fold{{"concept-0/img0", "concept-0/img1", "concept-0/img2"}, {}, 0}}};
  EXPECT_THROW(evaluate(model, heads::HeadRegistry{}, suite.concepts, folds, EvalConfig{}, emb, scorer), InputError);
}

}  // namespace
