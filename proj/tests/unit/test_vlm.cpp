// Copyright 2026 The MyConcept Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>

#include "myconcept/injection/injection.hpp"
#include "myconcept/store/synthetic.hpp"
#include "myconcept/vlm/checkpoint.hpp"
#include "myconcept/vlm/pretrain.hpp"

namespace {

using namespace myconcept;
using namespace myconcept::vlm;

ToyVlm small_model(FusionMode mode) { return ToyVlm::random(default_model_config(mode)); }

Image scene(std::uint64_t seed) {
  Rng rng(seed);
  return store::random_scene(rng).image;
}

// Softmax by explicit loops; kept separate from the library's Eigen code path.
double naive_penalty(const Matrix& q, const Matrix& k, int concept_index, double scale) {
  double total = 0;
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    std::vector<double> logits;
    double mx = -1e300;
    for (Eigen::Index j = 0; j < k.rows(); ++j) {
      double dot = 0;
      for (Eigen::Index c = 0; c < q.cols(); ++c) dot += q(i, c) * k(j, c);
      logits.push_back(scale * dot);
      mx = std::max(mx, logits.back());
    }
    double z = 0;
    for (double l : logits) z += std::exp(l - mx);
    const double p = std::exp(logits[static_cast<std::size_t>(concept_index)] - mx) / z;
    total += p * p;
  }
  return total;
}

TEST(Tokenizer, SplitsPunctuationAndLowercases) {
  EXPECT_EQ(split_words("Where is Bob?"), (std::vector<std::string>{"where", "is", "bob", "?"}));
}

TEST(Tokenizer, UnknownWordsNameTheToken) {
  const ToyVlm m = small_model(FusionMode::prefix);
  try {
    m.encode_text("please caption this zebra");
    FAIL() << "expected a tokenizer error";
  } catch (const TokenizerError& e) {
    EXPECT_EQ(e.token(), "zebra");
  }
}

TEST(Tokenizer, IdentifiersClaimNameSlots) {
  ToyVlm m = small_model(FusionMode::prefix);
  auto& tok = m.tokenizer();
  const int a = tok.register_identifier("kiro");
  EXPECT_TRUE(tok.is_name_slot(a));
  EXPECT_EQ(tok.register_identifier("kiro"), a);
  EXPECT_NE(tok.register_identifier("mavi"), a);
  EXPECT_EQ(*tok.find("sks"), tok.register_identifier("sks"));
  EXPECT_THROW(tok.register_identifier("red"), InputError);
  EXPECT_THROW(tok.register_identifier("two words"), InputError);
  EXPECT_THROW(tok.claim_slot("zed", a), InputError);
}

TEST(Tokenizer, ClaimSlotRestoresABinding) {
  ToyVlm trained = small_model(FusionMode::prefix);
  const int slot = trained.tokenizer().register_identifier("luma");
  ToyVlm fresh = small_model(FusionMode::prefix);
  fresh.tokenizer().claim_slot("luma", slot);
  EXPECT_EQ(*fresh.tokenizer().find("luma"), slot);
  EXPECT_NE(fresh.tokenizer().register_identifier("zeno"), slot);
}

TEST(NormMatching, MatchesMeanNormPerHead) {
  Rng rng(3);
  const Matrix keys = rng.normal_matrix(10, 32, 2.0);
  const Matrix values = rng.normal_matrix(10, 32, 0.5);
  const Vector k = rng.normal_matrix(32, 1, 9.0).col(0);
  const Vector v = rng.normal_matrix(32, 1, 0.1).col(0);
  const auto [km, vm] = injection::match_norms_per_head(k, v, keys, values, 4);
  for (int h = 0; h < 4; ++h) {
    EXPECT_NEAR(km.segment(h * 8, 8).norm(), keys.middleCols(h * 8, 8).rowwise().norm().mean(), 1e-12);
    EXPECT_NEAR(vm.segment(h * 8, 8).norm(), values.middleCols(h * 8, 8).rowwise().norm().mean(), 1e-12);
    EXPECT_NEAR(km.segment(h * 8, 8).normalized().dot(k.segment(h * 8, 8).normalized()), 1.0, 1e-12);
  }
}

TEST(NormMatching, RejectsDegenerateInput) {
  const Matrix keys = Matrix::Ones(3, 8);
  EXPECT_THROW(injection::match_norms(Vector::Zero(8), Vector::Ones(8), keys, keys), DegenerateInputError);
  EXPECT_THROW(injection::match_norms(Vector::Ones(4), Vector::Ones(8), keys, keys), DimensionError);
  EXPECT_THROW(injection::match_norms_per_head(Vector::Ones(8), Vector::Ones(8), keys, keys, 3), DimensionError);
}

TEST(Penalty, AgreesWithLoopOracle) {
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    const auto m = static_cast<Eigen::Index>(1 + rng.index(8));
    const auto n = static_cast<Eigen::Index>(2 + rng.index(8));
    const Matrix q = rng.normal_matrix(m, 6, 1.0);
    const Matrix k = rng.normal_matrix(n, 6, 1.0);
    const int idx = static_cast<int>(rng.index(static_cast<std::size_t>(n)));
    EXPECT_NEAR(injection::concept_attention_penalty(q, k, idx, 0.4), naive_penalty(q, k, idx, 0.4), 1e-12);
  }
}

TEST(Penalty, UniformAttentionGivesClosedForm) {
  for (int m : {1, 5, 32})
    for (int n : {1, 4, 16}) {
      const Matrix q = Matrix::Zero(m, 8);
      const Matrix k = Matrix::Ones(n + 1, 8);
      const double expected = static_cast<double>(m) / ((n + 1.0) * (n + 1.0));
      EXPECT_NEAR(injection::concept_attention_penalty(q, k, n, 1.0), expected, 1e-15);
    }
}

TEST(Penalty, PrefixFormSkipsConceptRows) {
  AttentionRecord rec;
  Matrix p = Matrix::Zero(3, 3);
  p << 1, 0, 0, 0.5, 0.5, 0, 0.2, 0.3, 0.5;
  rec.probs = {p};
  // Rows 0 and 2 look at column 1 with 0 and 0.3.
  EXPECT_NEAR(injection::prefix_attention_penalty({rec}, {1}), (0.0 + 0.09) / 2, 1e-15);
  EXPECT_THROW(injection::prefix_attention_penalty({rec}, {3}), InputError);
}

TEST(Model, FusionPenaltyMatchesRecordedAttention) {
  const ToyVlm m = small_model(FusionMode::qformer);
  Rng rng(2);
  const auto f = m.encode_image(scene(4));
  const InjectedConcept c{rng.normal_matrix(m.concept_dim(), 1, 1.0).col(0), *m.token_id("sks")};
  const auto instr = m.encode_text(kCaptionInstruction);
  auto target = m.encode_text("sks on a gray background");
  target.push_back(kEos);
  const auto loss = m.forward_loss(f, instr, target, {c}, {0.25});
  const auto trace = m.generate(f, kCaptionInstruction, {c}, {});
  double sum = 0;
  int count = 0;
  for (const auto& rec : trace.attention_records) {
    if (rec.stage != AttentionStage::fusion) continue;
    for (const auto& p : rec.probs) {
      sum += p.col(p.cols() - 1).squaredNorm();
      ++count;
    }
  }
  EXPECT_NEAR(loss.reg, sum / count, 1e-10);
  EXPECT_NEAR(loss.loss, loss.ce + 0.25 * loss.reg, 1e-12);
}

TEST(Model, EmptyInjectionLeavesOutputUnchanged) {
  for (auto mode : {FusionMode::qformer, FusionMode::prefix}) {
    const ToyVlm m = small_model(mode);
    const auto f = m.encode_image(scene(9));
    const auto a = m.generate(f, kCaptionInstruction, {}, {});
    const auto b = m.generate(f, kCaptionInstruction, {}, {});
    EXPECT_EQ(a.tokens, b.tokens);
    EXPECT_TRUE(a.concept_positions.empty());
    EXPECT_EQ(injection::concept_attention_mass(a), 0.0);
  }
}

TEST(Model, InjectionIsVisibleInAttention) {
  for (auto mode : {FusionMode::qformer, FusionMode::prefix}) {
    const ToyVlm m = small_model(mode);
    Rng rng(1);
    const auto f = m.encode_image(scene(11));
    const InjectedConcept c{rng.normal_matrix(m.concept_dim(), 1, 1.0).col(0), *m.token_id("sks")};
    const auto trace = m.generate(f, kCaptionInstruction, {c}, {});
    const double mass = injection::concept_attention_mass(trace);
    EXPECT_GT(mass, 0.0);
    EXPECT_LT(mass, 1.0);
  }
}

TEST(Model, GradientMatchesFiniteDifferences) {
  for (auto mode : {FusionMode::qformer, FusionMode::prefix}) {
    const ToyVlm m = small_model(mode);
    Rng rng(7);
    const auto f = m.encode_image(scene(3));
    const auto instr = m.encode_text(kCaptionInstruction);
    auto target = m.encode_text("sks on a white background");
    target.push_back(kEos);
    InjectedConcept c{rng.normal_matrix(m.concept_dim(), 1, 1.0).col(0), *m.token_id("sks")};
    const auto r = m.forward_loss(f, instr, target, {c}, {0.04});
    const double eps = 1e-5;
    for (Eigen::Index i = 0; i < c.embedding.size(); i += 5) {
      auto plus = c, minus = c;
      plus.embedding(i) += eps;
      minus.embedding(i) -= eps;
      const double fd = (m.forward_loss(f, instr, target, {plus}, {0.04}).loss -
                         m.forward_loss(f, instr, target, {minus}, {0.04}).loss) /
                        (2 * eps);
      EXPECT_NEAR(r.gradients[0](i), fd, 1e-6 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST(Model, RejectsMalformedInjection) {
  const ToyVlm m = small_model(FusionMode::prefix);
  const auto f = m.encode_image(scene(1));
  EXPECT_THROW(m.generate(f, kCaptionInstruction, {{Vector::Ones(3), *m.token_id("sks")}}, {}), DimensionError);
  EXPECT_THROW(m.forward_loss(f, {}, {}, {}, {}), InputError);
}

TEST(Checkpoint, RoundTripsBitExactly) {
  const ToyVlm m = small_model(FusionMode::qformer);
  const auto bytes = serialize_model(m);
  const ToyVlm back = deserialize_model(bytes);
  // Weights are stored as float32, so the first load rounds and later ones are exact.
  EXPECT_EQ(serialize_model(back), bytes);
  EXPECT_EQ(deserialize_model(serialize_model(back)).parameter_checksum(), back.parameter_checksum());
  EXPECT_EQ(back.mode(), FusionMode::qformer);
  EXPECT_EQ(back.tokenizer().words(), m.tokenizer().words());
}

TEST(Checkpoint, RejectsCorruption) {
  auto bytes = serialize_model(small_model(FusionMode::prefix));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize_model(bad_magic), FormatError);
  auto bad_version = bytes;
  bad_version[4] = 9;
  EXPECT_THROW(deserialize_model(bad_version), FormatError);
  bytes.resize(bytes.size() - 9);
  EXPECT_THROW(deserialize_model(bytes), FormatError);
}

TEST(Checkpoint, BundledModelsLoad) {
  for (const char* name : {"qformer.tvlm", "prefix.tvlm"}) {
    const auto path = std::filesystem::path(MYCONCEPT_MODEL_DIR) / name;
    if (!std::filesystem::exists(path)) GTEST_SKIP() << "missing " << path;
    const ToyVlm m = load_model(path);
    const auto trace = m.generate(m.encode_image(scene(21)), kCaptionInstruction, {}, {});
    EXPECT_FALSE(trace.text.empty());
  }
}

TEST(Encoder, IsDeterministicAndShapeChecked) {
  const ToyVlm m = small_model(FusionMode::qformer);
  const Image img = scene(5);
  EXPECT_TRUE(m.encode_image(img) == m.encode_image(img));
  Image bad = img;
  bad.pixels.pop_back();
  EXPECT_THROW(m.encode_image(bad), DimensionError);
}

}  // namespace
