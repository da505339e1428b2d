// Copyright 2026 The MyConcept Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "myconcept/cli/settings.hpp"
#include "myconcept/io/image_io.hpp"
#include "myconcept/store/concept_store.hpp"
#include "myconcept/store/ingest.hpp"
#include "myconcept/store/synthetic.hpp"

namespace {

using namespace myconcept;
namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = fs::temp_directory_path() / ("myconcept-test-" + std::to_string(rng()));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

// Values that survive a float32 round trip unchanged.
Vector float_vector(Eigen::Index n, Rng& rng) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = static_cast<float>(rng.normal());
  return v;
}

store::ConceptRecord sample_record(Rng& rng, int kind) {
  store::ConceptRecord r;
  r.concept_id = "c0001";
  r.name = "red mug";
  r.identifier = "sks";
  r.category = "mug";
  r.type = kind == 2 ? "person" : "object";
  r.mode = kind == 1 ? vlm::FusionMode::qformer : vlm::FusionMode::prefix;
  r.identifier_token = 100;
  r.version = 3;
  r.created_at = "2026-01-02T03:04:05Z";
  r.embedding = float_vector(16, rng);
  r.head_embedder = "color-adjacency/v1";
  r.provenance = {{"steps", 100}};
  if (kind == 1) {
    heads::LinearHead h;
    h.weights = float_vector(12, rng);
    h.bias = rng.normal();
    h.training_auc = 0.93;
    h.trained_pos = 4;
    h.trained_neg = 150;
    r.head = h;
  } else if (kind == 2) {
    std::vector<Vector> refs;
    for (int i = 0; i < 3; ++i) refs.push_back(float_vector(8, rng).normalized().cast<float>().cast<double>());
    r.head = heads::GalleryHead::from_unit_references(refs, 0.675);
  }
  return r;
}

TEST(Record, RoundTripsEveryHeadKind) {
  Rng rng(1);
  for (int kind = 0; kind < 3; ++kind) {
    const auto r = sample_record(rng, kind);
    const auto bytes = store::serialize_record(r);
    const auto back = store::deserialize_record(bytes);
    EXPECT_TRUE(back == r) << "kind " << kind;
    EXPECT_EQ(store::serialize_record(back), bytes);
  }
}

TEST(Record, GalleryThresholdIsWrittenToTheHeader) {
  Rng rng(2);
  const auto bytes = store::serialize_record(sample_record(rng, 2));
  const std::string text(bytes.begin(), bytes.end());
  EXPECT_NE(text.find("\"threshold\":0.675"), std::string::npos);
  EXPECT_NE(text.find("\"distance_metric\":\"cosine\""), std::string::npos);
}

TEST(Record, RejectsDamage) {
  Rng rng(3);
  const auto good = store::serialize_record(sample_record(rng, 1));
  auto magic = good;
  magic[1] = 'Z';
  EXPECT_THROW(store::deserialize_record(magic), FormatError);
  auto flipped = good;
  flipped[good.size() / 2] ^= 1;
  EXPECT_THROW(store::deserialize_record(flipped), CorruptionError);
  auto crc = good;
  crc.back() ^= 0x80;
  EXPECT_THROW(store::deserialize_record(crc), CorruptionError);
  EXPECT_THROW(store::deserialize_record({good.begin(), good.begin() + 8}), FormatError);
}

TEST(ConceptStore, CreatesListsAndVersions) {
  TempDir tmp;
  store::ConceptStore st(tmp.path());
  store::ConceptMeta m{"", "red mug", "sks", "mug", "object", ""};
  const auto a = st.create(m);
  EXPECT_EQ(a.concept_id, "c0001");
  EXPECT_FALSE(a.created_at.empty());
  m.identifier = "SKS";
  EXPECT_THROW(st.create(m), ConflictError);
  m.identifier = "bob";
  EXPECT_EQ(st.create(m).concept_id, "c0002");
  EXPECT_EQ(st.list().size(), 2u);

  Rng rng(4);
  auto r = sample_record(rng, 1);
  r.concept_id = a.concept_id;
  r.created_at.clear();
  EXPECT_EQ(st.commit(r).version, 1);
  EXPECT_EQ(st.commit(r).version, 2);
  EXPECT_EQ(st.versions(a.concept_id, vlm::FusionMode::qformer), (std::vector<int>{1, 2}));
  EXPECT_TRUE(st.versions(a.concept_id, vlm::FusionMode::prefix).empty());
  EXPECT_EQ(st.latest(a.concept_id, vlm::FusionMode::qformer)->version, 2);
  EXPECT_EQ(st.load(a.concept_id, vlm::FusionMode::qformer, 1).version, 1);
  EXPECT_THROW(st.load(a.concept_id, vlm::FusionMode::qformer, 9), NotFoundError);

  r.concept_id = "c0404";
  EXPECT_THROW(st.commit(r), NotFoundError);
  EXPECT_TRUE(st.remove(a.concept_id));
  EXPECT_FALSE(st.get(a.concept_id));
  EXPECT_FALSE(st.get("../etc"));
}

TEST(ConceptStore, MetadataValidation) {
  EXPECT_THROW(store::meta_from_json({{"name", "x"}, {"identifier", "a"}, {"category", "c"}}, "m"), ValidationError);
  EXPECT_THROW(store::meta_from_json({{"name", "x"}, {"identifier", "a b"}, {"category", "c"}, {"type", "object"}}, "m"),
               ValidationError);
  EXPECT_THROW(store::meta_from_json({{"name", "x"}, {"identifier", "a"}, {"category", "c"}, {"type", "dog"}}, "m"),
               ValidationError);
  EXPECT_NO_THROW(store::meta_from_json({{"name", "x"}, {"identifier", "a"}, {"category", "c"}, {"type", "person"}}, "m"));
}

store::ConceptDataset small_dataset(std::size_t people = 0) {
  store::SuiteOptions so;
  so.n_concepts = 2;
  so.images_per_concept = 3;
  so.n_negatives = 2;
  so.n_people = people;
  return store::generate_synthetic_suite(so).concepts.back();
}

TEST(Ingest, WritesAndReadsAConceptFolder) {
  TempDir tmp;
  const auto ds = small_dataset(1);
  store::write_concept_dir(ds, tmp.path() / "one");
  const auto back = store::ingest_concept_dir(tmp.path() / "one");
  EXPECT_EQ(back.identifier, ds.identifier);
  EXPECT_EQ(back.type, "person");
  EXPECT_EQ(back.size(), ds.size());
  EXPECT_EQ(back.captions, ds.captions);
  EXPECT_EQ(back.variants, ds.variants);
  EXPECT_EQ(back.qa_pairs, ds.qa_pairs);
  EXPECT_EQ(back.negatives.size(), 2u);
  ASSERT_EQ(back.face_probes.size(), ds.face_probes.size());
  EXPECT_EQ(back.face_probes[0], ds.face_probes[0]);
  // PNG quantises to 8 bits.
  for (std::size_t i = 0; i < back.images[0].pixels.size(); ++i)
    EXPECT_NEAR(back.images[0].pixels[i], ds.images[0].pixels[i], 0.5 / 255 + 1e-9);
}

TEST(Ingest, MissingCaptionNamesTheImage) {
  TempDir tmp;
  store::write_concept_dir(small_dataset(), tmp.path());
  std::ofstream(tmp.path() / "captions.json") << R"({"000.png": "<concept> on a gray background"})";
  try {
    store::ingest_concept_dir(tmp.path());
    FAIL() << "expected a validation error";
  } catch (const ValidationError& e) {
    EXPECT_NE(e.path().find("001.png"), std::string::npos) << e.what();
  }
}

TEST(Ingest, CaptionWithoutPlaceholderIsRejected) {
  TempDir tmp;
  store::write_concept_dir(small_dataset(), tmp.path());
  std::ofstream(tmp.path() / "captions.json")
      << R"({"000.png": "a mug", "001.png": "<concept>", "002.png": "<concept>"})";
  try {
    store::ingest_concept_dir(tmp.path());
    FAIL() << "expected a validation error";
  } catch (const ValidationError& e) {
    EXPECT_NE(e.path().find("captions.json [000.png]"), std::string::npos) << e.what();
  }
}

TEST(Ingest, BadMetadataAndDuplicates) {
  TempDir tmp;
  const auto ds = small_dataset();
  store::write_concept_dir(ds, tmp.path() / "a");
  store::write_concept_dir(ds, tmp.path() / "b");
  EXPECT_THROW(store::ingest_concept_dirs(tmp.path()), ValidationError);
  std::ofstream(tmp.path() / "b" / "meta.json") << "{not json";
  EXPECT_THROW(store::ingest_concept_dir(tmp.path() / "b"), ValidationError);
  EXPECT_THROW(store::ingest_concept_dir(tmp.path() / "missing"), ValidationError);
}

TEST(ImageIo, PngRoundTripAndResize) {
  Image img(8, 12);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<double>(i % 256) / 255.0;
  const Image back = io::decode_image(io::encode_png(img));
  ASSERT_EQ(back.height, 8);
  ASSERT_EQ(back.width, 12);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_NEAR(back.pixels[i], img.pixels[i], 1e-12);
  const Image small = io::to_model_input(img);
  EXPECT_EQ(small.height, io::kModelImageSize);
  EXPECT_EQ(small.width, io::kModelImageSize);
  EXPECT_THROW(io::decode_image({1, 2, 3}), InputError);
  EXPECT_THROW(io::load_image("/nonexistent/x.png"), InputError);
  EXPECT_TRUE(io::has_image_extension("a/B.JPG"));
  EXPECT_FALSE(io::has_image_extension("a/b.txt"));
}

TEST(Settings, PrecedenceIsFlagsThenEnvThenFileThenDefaults) {
  TempDir tmp;
  const auto cfg = tmp.path() / "myconcept.toml";
  std::ofstream(cfg) << "# settings\nstore_dir = \"/from/file\"\nmode = \"qformer\"\nport = 9000\nseed = 5\n";
  const auto file = cli::read_config_file(cfg.string());
  std::map<std::string, std::string> env_vars = {{"MYCONCEPT_MODE", "prefix"}, {"MYCONCEPT_PORT", "9100"}};
  const auto env = cli::environment_values([&](const char* name) -> const char* {
    auto it = env_vars.find(name);
    return it == env_vars.end() ? nullptr : it->second.c_str();
  });
  const auto s = cli::resolve_settings({}, file, env, {{"port", "9200"}});
  EXPECT_EQ(s.store_dir, "/from/file");
  EXPECT_EQ(s.mode, "prefix");
  EXPECT_EQ(s.port, 9200);
  EXPECT_EQ(s.seed, 5u);
  EXPECT_EQ(s.threads, 1);
}

TEST(Settings, RejectsUnknownKeysAndBadValues) {
  TempDir tmp;
  const auto cfg = tmp.path() / "bad.toml";
  std::ofstream(cfg) << "colour = \"blue\"\n";
  EXPECT_THROW(cli::read_config_file(cfg.string()), ValidationError);
  EXPECT_THROW(cli::read_config_file((tmp.path() / "none.toml").string()), ValidationError);
  EXPECT_THROW(cli::resolve_settings({}, {}, {}, {{"mode", "fused"}}), ValidationError);
  EXPECT_THROW(cli::resolve_settings({}, {}, {{"port", "http"}}, {}), ValidationError);
  EXPECT_THROW(cli::resolve_settings({}, {{"threads", "0"}}, {}, {}), ValidationError);
}

}  // namespace
