// Copyright 2026 The MyConcept Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: ingest concept folders, train heads and concept vectors,
// caption and answer questions with personalization, run the evaluation harness and
// serve the HTTP API.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "myconcept/cli/settings.hpp"
#include "myconcept/eval/harness.hpp"
#include "myconcept/eval/metrics.hpp"
#include "myconcept/heads/embedder.hpp"
#include "myconcept/heads/heads.hpp"
#include "myconcept/io/image_io.hpp"
#include "myconcept/service/server.hpp"
#include "myconcept/store/concept_store.hpp"
#include "myconcept/store/ingest.hpp"
#include "myconcept/store/synthetic.hpp"
#include "myconcept/trainer/trainer.hpp"
#include "myconcept/vlm/checkpoint.hpp"
#include "myconcept/vlm/pretrain.hpp"

#ifndef MYCONCEPT_DEFAULT_MODEL_DIR
#define MYCONCEPT_DEFAULT_MODEL_DIR "models"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace myconcept;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

struct Globals {
  bool json_output = false;
  std::string config;
  std::string store_dir, model_path, mode;
  std::uint64_t seed = 0;
  int threads = 1;
  cli::Settings settings;
};

void emit(const Globals& g, const json& j, const std::string& human) {
  if (g.json_output) {
    std::cout << j.dump(2) << '\n';
  } else {
    std::cout << human << '\n';
  }
}

vlm::FusionMode mode_of(const Globals& g) { return vlm::fusion_mode_from_string(g.settings.mode); }

fs::path model_file(const Globals& g, vlm::FusionMode mode) {
  const fs::path p = g.settings.model_path;
  if (fs::is_directory(p)) return p / (vlm::to_string(mode) + ".tvlm");
  return p;
}

vlm::ToyVlm load_model_for(const Globals& g, vlm::FusionMode mode) {
  const fs::path p = model_file(g, mode);
  if (!fs::exists(p)) throw InputError("model file not found: " + p.string());
  vlm::ToyVlm model = vlm::load_model(p);
  if (model.mode() != mode)
    throw InputError("model " + p.string() + " is " + vlm::to_string(model.mode()) + ", not " + vlm::to_string(mode));
  return model;
}

/// Everything a caption or question needs: the frozen model with identifiers bound
/// to their stored slots, the heads and the latest concept vectors.
struct Workspace {
  vlm::ToyVlm model;
  heads::ColorAdjacencyEmbedder embedder;
  heads::HeadRegistry registry = heads::HeadRegistry(embedder.id());
  std::map<std::string, store::ConceptRecord> records;
  std::vector<store::ConceptMeta> metas;
};

Workspace open_workspace(const Globals& g, const store::ConceptStore& st, const std::vector<std::string>& only) {
  const vlm::FusionMode mode = mode_of(g);
  Workspace ws{load_model_for(g, mode), {}, heads::HeadRegistry(heads::ColorAdjacencyEmbedder().id()), {}, {}};
  ws.metas = st.list();
  auto wanted = [&](const std::string& id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };
  for (const auto& id : only)
    if (!st.get(id)) throw NotFoundError("unknown concept '" + id + "'");
  for (const auto& m : ws.metas) {
    auto rec = st.latest(m.concept_id, mode);
    if (!rec) continue;
    ws.model.tokenizer().claim_slot(rec->identifier, rec->identifier_token);
    if (!wanted(m.concept_id)) continue;
    if (rec->head) ws.registry.put(m.concept_id, {*rec->head, rec->identifier});
    ws.records[m.concept_id] = *rec;
  }
  for (const auto& m : ws.metas)
    if (!ws.model.tokenizer().find(m.identifier)) ws.model.tokenizer().register_identifier(m.identifier);
  return ws;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<Vector> read_probes(const std::string& path) {
  std::vector<Vector> out;
  if (path.empty()) return out;
  const json j = store::detail::read_json_file(path);
  try {
    for (const auto& p : j) out.push_back(to_vector(p.get<std::vector<double>>()));
  } catch (const json::exception&) {
    throw ValidationError("face probes must be a list of number lists", path);
  }
  return out;
}

store::ConceptRecord base_record(const store::ConceptStore& st, const store::ConceptMeta& m, vlm::FusionMode mode) {
  if (auto prev = st.latest(m.concept_id, mode)) {
    prev->provenance = json::object();
    prev->created_at.clear();
    return *prev;
  }
  store::ConceptRecord r;
  r.concept_id = m.concept_id;
  r.name = m.name;
  r.identifier = m.identifier;
  r.category = m.category;
  r.type = m.type;
  r.mode = mode;
  return r;
}

store::ConceptMeta require_concept(const store::ConceptStore& st, const std::string& id) {
  auto m = st.get(id);
  if (!m) throw NotFoundError("unknown concept '" + id + "'");
  return *m;
}

// ---- subcommands -----------------------------------------------------------

struct SynthArgs {
  std::size_t concepts = 10, images = 10, negatives = 150, people = 0;
  std::string out;
};

int run_synth(const Globals& g, const SynthArgs& a) {
  store::SuiteOptions opt;
  opt.n_concepts = a.concepts;
  opt.images_per_concept = a.images;
  opt.n_negatives = a.negatives;
  opt.n_people = a.people;
  opt.seed = g.settings.seed;
  const auto suite = store::generate_synthetic_suite(opt);
  json written = json::array();
  for (const auto& ds : suite.concepts) {
    store::write_concept_dir(ds, fs::path(a.out) / ds.concept_id);
    written.push_back(ds.concept_id);
  }
  emit(g, {{"out", a.out}, {"concepts", written}},
       "wrote " + std::to_string(written.size()) + " concept folders to " + a.out);
  return 0;
}

int run_ingest(const Globals& g, const std::string& dir) {
  store::ConceptStore st(g.settings.store_dir);
  const auto datasets = store::ingest_concept_dirs(dir);
  if (datasets.empty()) throw ValidationError("no concept folders found", dir);
  json added = json::array();
  for (const auto& ds : datasets) {
    store::ConceptMeta meta;
    meta.name = ds.name;
    meta.identifier = ds.identifier;
    meta.category = ds.category;
    meta.type = ds.type;
    meta = st.create(meta);
    store::write_concept_dir(ds, st.concept_dir(meta.concept_id), false);
    added.push_back({{"concept_id", meta.concept_id}, {"identifier", meta.identifier}, {"n_images", ds.size()}});
  }
  std::string human;
  for (const auto& a : added)
    human += a["concept_id"].get<std::string>() + "  " + a["identifier"].get<std::string>() + "  " +
             std::to_string(a["n_images"].get<std::size_t>()) + " images\n";
  human.pop_back();
  emit(g, {{"added", added}}, human);
  return 0;
}

struct HeadArgs {
  std::string concept_id;
  int steps = 500;
  std::size_t negatives = 150;
};

int run_train_head(const Globals& g, const HeadArgs& a) {
  store::ConceptStore st(g.settings.store_dir);
  const auto meta = require_concept(st, a.concept_id);
  const auto ds = store::ingest_concept_dir(st.concept_dir(a.concept_id));
  const heads::ColorAdjacencyEmbedder embedder;
  heads::ConceptHead head;
  json summary;
  if (ds.type == "person" && !ds.face_probes.empty()) {
    std::vector<Vector> refs;
    for (const auto& p : ds.face_probes) refs.push_back(to_vector(p));
    head = heads::GalleryHead(refs);
    summary = {{"kind", "gallery"}, {"n_references", refs.size()}, {"threshold", heads::kDefaultGalleryThreshold}};
  } else {
    std::vector<Vector> pos, neg;
    for (const auto& img : ds.images) pos.push_back(embedder.embed(img));
    std::vector<Image> neg_images = ds.negatives;
    if (neg_images.empty()) {
      Rng rng(99);
      neg_images = store::negative_scenes(a.negatives, {}, rng);
    }
    for (const auto& img : neg_images) neg.push_back(embedder.embed(img));
    heads::HeadTrainConfig hc;
    hc.steps = a.steps;
    hc.seed = g.settings.seed;
    const auto lh = heads::train_linear_head(pos, neg, hc);
    summary = {{"kind", "linear"}, {"training_auc", lh.training_auc}, {"quality_warning", lh.quality_warning}};
    head = lh;
  }
  store::ConceptRecord rec = base_record(st, meta, mode_of(g));
  rec.head = head;
  rec.head_embedder = embedder.id();
  rec.provenance = {{"command", "train-head"}, {"seed", g.settings.seed}};
  // A record needs a slot even before it carries a vector.
  if (rec.identifier_token < 0) {
    vlm::ToyVlm model = load_model_for(g, rec.mode);
    for (const auto& m : st.list())
      if (auto r = st.latest(m.concept_id, rec.mode)) model.tokenizer().claim_slot(r->identifier, r->identifier_token);
    rec.identifier_token = model.tokenizer().register_identifier(rec.identifier);
  }
  rec = st.commit(rec);
  summary["concept_id"] = rec.concept_id;
  summary["mode"] = vlm::to_string(rec.mode);
  summary["version"] = rec.version;
  std::string human = rec.concept_id + ": " + summary["kind"].get<std::string>() + " head saved as version " +
                      std::to_string(rec.version);
  if (summary.value("quality_warning", false)) human += " (warning: low training AUC)";
  emit(g, summary, human);
  return 0;
}

struct EmbeddingArgs {
  std::string concept_id;
  int steps = -1;
  double lambda = -1;
  std::string task = "caption";
  bool no_augment = false;
  std::string history;
};

int run_train_embedding(const Globals& g, const EmbeddingArgs& a) {
  store::ConceptStore st(g.settings.store_dir);
  const auto meta = require_concept(st, a.concept_id);
  const auto ds = store::ingest_concept_dir(st.concept_dir(a.concept_id));
  const vlm::FusionMode mode = mode_of(g);
  vlm::ToyVlm model = load_model_for(g, mode);
  for (const auto& m : st.list())
    if (auto r = st.latest(m.concept_id, mode)) model.tokenizer().claim_slot(r->identifier, r->identifier_token);
  model.tokenizer().register_identifier(ds.identifier);

  auto tc = trainer::TrainingConfig::toy(mode, ds.type == "person");
  if (a.steps >= 0) tc.steps = a.steps;
  if (a.lambda >= 0) tc.lambda_reg = a.lambda;
  tc.mode = trainer::task_mode_from_string(a.task);
  if (a.no_augment) tc.augment = trainer::AugmentSwitches::none();
  tc.seed = g.settings.seed;
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), 0);
  const auto result = trainer::optimize_embedding(model, trainer::samples_from_dataset(ds, all), ds.identifier, tc);
  if (!a.history.empty()) {
    std::ofstream out(a.history);
    if (!out) throw InputError("cannot write history file: " + a.history);
    result.history.write_jsonl(out);
  }

  store::ConceptRecord rec = base_record(st, meta, mode);
  rec.identifier_token = result.embedding.identifier_token;
  rec.embedding = result.embedding.vector;
  rec.provenance = {{"command", "train-embedding"}, {"steps", tc.steps},     {"lambda", tc.lambda_reg},
                    {"seed", tc.seed},              {"task", a.task},        {"n_images", ds.size()},
                    {"model_checksum", model.parameter_checksum()}};
  rec = st.commit(rec);
  const double final_loss = result.history.steps.empty() ? 0.0 : result.history.steps.back().loss;
  emit(g,
       {{"concept_id", rec.concept_id}, {"mode", vlm::to_string(mode)}, {"version", rec.version},
        {"steps", tc.steps}, {"final_loss", final_loss}},
       rec.concept_id + ": " + vlm::to_string(mode) + " embedding saved as version " + std::to_string(rec.version) +
           " (final loss " + std::to_string(final_loss) + ")");
  return 0;
}

struct GenerateArgs {
  std::string image;
  std::string concepts = "all";
  std::string question;
  std::string face_probes;
  std::size_t max_concepts = 3;
};

int run_generate(const Globals& g, const GenerateArgs& a, bool vqa) {
  if (!fs::exists(a.image)) throw InputError("image not found: " + a.image);
  store::ConceptStore st(g.settings.store_dir);
  const std::vector<std::string> only = a.concepts == "all" ? std::vector<std::string>{} : split_list(a.concepts);
  Workspace ws = open_workspace(g, st, only);
  const Image img = io::to_model_input(io::load_image(a.image));
  const std::string prompt = vqa ? a.question : std::string(vlm::kCaptionInstruction);
  if (vqa) ws.model.encode_text(prompt);

  std::vector<vlm::InjectedConcept> injected;
  std::vector<std::string> injected_ids;
  json detections = json::array();
  for (const auto& d : ws.registry.detect(ws.embedder.features(img), read_probes(a.face_probes))) {
    auto it = ws.records.find(d.concept_id);
    const bool use = d.fired && it != ws.records.end() && it->second.embedding && injected.size() < a.max_concepts;
    if (use) {
      injected.push_back({*it->second.embedding, it->second.identifier_token});
      injected_ids.push_back(d.concept_id);
    }
    detections.push_back({{"concept_id", d.concept_id}, {"score", d.score}, {"fired", d.fired}, {"injected", use}});
  }
  if (vqa) {
    const auto words = vlm::split_words(prompt);
    for (const auto& [id, rec] : ws.records) {
      if (!rec.embedding || std::find(words.begin(), words.end(), rec.identifier) == words.end()) continue;
      if (std::find(injected_ids.begin(), injected_ids.end(), id) != injected_ids.end()) continue;
      injected.push_back({*rec.embedding, rec.identifier_token});
      injected_ids.push_back(id);
    }
  }
  const auto trace = ws.model.generate(ws.model.encode_image(img), prompt, injected, {});
  emit(g,
       {{vqa ? "answer" : "text", trace.text}, {"mode", g.settings.mode}, {"detections", detections},
        {"injected", injected_ids}},
       trace.text);
  return 0;
}

struct EvalArgs {
  int folds = 5;
  int train_size = 4;
  std::string data;
  std::size_t concepts = 10, images = 10, people = 0;
  int steps = -1;
  bool no_heads = false;
  std::string out;
  std::string csv;
};

int run_eval(const Globals& g, const EvalArgs& a) {
  const vlm::FusionMode mode = mode_of(g);
  vlm::ToyVlm model = load_model_for(g, mode);
  std::vector<store::ConceptDataset> concepts;
  if (!a.data.empty()) {
    concepts = store::ingest_concept_dirs(a.data);
    if (concepts.empty()) throw ValidationError("no concept folders found", a.data);
  } else {
    store::SuiteOptions opt;
    opt.n_concepts = a.concepts;
    opt.images_per_concept = a.images;
    opt.n_people = a.people;
    opt.seed = g.settings.seed;
    concepts = store::generate_synthetic_suite(opt).concepts;
  }
  for (const auto& ds : concepts) model.tokenizer().register_identifier(ds.identifier);

  eval::EvalConfig cfg;
  cfg.training = trainer::TrainingConfig::toy(mode);
  if (a.steps >= 0) cfg.training.steps = a.steps;
  cfg.use_heads = !a.no_heads;
  cfg.threads = g.settings.threads;
  cfg.seed = g.settings.seed;
  std::vector<std::vector<eval::Fold>> folds;
  for (std::size_t c = 0; c < concepts.size(); ++c)
    folds.push_back(eval::make_folds(concepts[c].image_ids, a.folds, a.train_size, g.settings.seed + c));
  const auto words = model.tokenizer().words();
  const eval::TfEmbedder embedder(words);
  const eval::ToyImageTextScorer scorer(words);
  const auto report = eval::evaluate(model, heads::HeadRegistry{}, concepts, folds, cfg, embedder, scorer);
  const json j = eval::to_json(report);
  if (!a.out.empty()) {
    const std::string text = j.dump(2);
    io::write_file_atomic(a.out, std::vector<std::uint8_t>(text.begin(), text.end()));
  }
  if (!a.csv.empty()) {
    std::ofstream out(a.csv);
    if (!out) throw InputError("cannot write CSV file: " + a.csv);
    eval::write_csv(report, out);
  }
  const auto& all = report.aggregates.at("all");
  char line[160];
  std::snprintf(line, sizeof line, "%zu concepts, %zu samples: recall %.3f (keyword baseline %.3f), text sim %.3f",
                all.n_concepts, all.n_samples, all.recall, all.baseline_recall, all.text_similarity);
  emit(g, g.json_output ? j : json(), line);
  return 0;
}

struct PretrainArgs {
  int steps = 2000;
  int scenes = 4000;
  std::string out;
};

int run_pretrain(const Globals& g, const PretrainArgs& a) {
  const vlm::FusionMode mode = mode_of(g);
  vlm::ModelConfig mc = vlm::default_model_config(mode);
  mc.seed = g.settings.seed;
  vlm::ToyVlm model = vlm::ToyVlm::random(mc);
  vlm::PretrainConfig pc;
  pc.steps = a.steps;
  pc.n_scenes = a.scenes;
  pc.seed = g.settings.seed + 1;
  if (!g.json_output)
    pc.on_progress = [&](int step, double loss) {
      if (step % 250 == 0) std::cerr << "step " << step << " loss " << loss << '\n';
    };
  vlm::pretrain(model, pc);
  const std::string out = a.out.empty() ? (fs::path(g.settings.model_path) / (vlm::to_string(mode) + ".tvlm")).string() : a.out;
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  vlm::save_model(model, out);
  emit(g, {{"out", out}, {"mode", vlm::to_string(mode)}, {"checksum", model.parameter_checksum()}},
       "saved " + vlm::to_string(mode) + " model to " + out);
  return 0;
}

int run_serve(const Globals& g) {
  service::ServiceConfig sc;
  sc.store_dir = g.settings.store_dir;
  sc.port = g.settings.port;
  sc.model_path = g.settings.model_path;
  sc.bearer_token = g.settings.token;
  sc.default_mode = mode_of(g);
  service::Service svc(sc);
  std::cerr << "serving /v1 on " << sc.host << ':' << sc.port << '\n';
  svc.run();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Personalize a small vision-language model with learned concept vectors", "myconcept"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  auto* opt_json = app.add_flag("--json", g.json_output, "Print machine-readable JSON");
  (void)opt_json;
  app.add_option("--config", g.config, "TOML file with store_dir, model_path, mode, port, seed, threads, token");
  auto* opt_store = app.add_option("--store", g.store_dir, "Concept store directory");
  auto* opt_model = app.add_option("--model", g.model_path, "Model file or directory of models");
  auto* opt_mode = app.add_option("--mode", g.mode, "Fusion mode")->check(CLI::IsMember({"qformer", "prefix"}));
  auto* opt_seed = app.add_option("--seed", g.seed, "Random seed");
  auto* opt_threads = app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Write a synthetic concept suite as concept folders");
  c_synth->add_option("--concepts", synth.concepts, "Number of concepts");
  c_synth->add_option("--images", synth.images, "Images per concept");
  c_synth->add_option("--negatives", synth.negatives, "Negative images per concept");
  c_synth->add_option("--people", synth.people, "How many of the concepts are people");
  c_synth->add_option("--out", synth.out, "Output directory")->required();

  std::string ingest_dir;
  auto* c_ingest = app.add_subcommand("ingest", "Add concept folders to the store");
  c_ingest->add_option("dir", ingest_dir, "A concept folder or a folder of concept folders")->required();

  HeadArgs head;
  auto* c_head = app.add_subcommand("train-head", "Train the recognition head of a stored concept");
  c_head->add_option("concept", head.concept_id, "Concept id")->required();
  c_head->add_option("--steps", head.steps, "Optimizer steps");
  c_head->add_option("--negatives", head.negatives, "Synthetic negatives when the concept has none");

  EmbeddingArgs emb;
  auto* c_emb = app.add_subcommand("train-embedding", "Learn the concept vector of a stored concept");
  c_emb->add_option("concept", emb.concept_id, "Concept id")->required();
  c_emb->add_option("--steps", emb.steps, "Optimizer steps (default depends on mode)");
  c_emb->add_option("--lambda", emb.lambda, "Attention-mass penalty weight (default depends on mode)");
  c_emb->add_option("--task", emb.task, "Training task")->check(CLI::IsMember({"caption", "vqa"}));
  c_emb->add_flag("--no-augment", emb.no_augment, "Disable image augmentations");
  c_emb->add_option("--history", emb.history, "Write per-step records as JSON lines");

  GenerateArgs cap;
  auto* c_cap = app.add_subcommand("caption", "Caption an image, naming recognised concepts");
  c_cap->add_option("image", cap.image, "Image file")->required();
  c_cap->add_option("--concepts", cap.concepts, "'all' or comma-separated concept ids");
  c_cap->add_option("--face-probes", cap.face_probes, "JSON file with face probe vectors");
  c_cap->add_option("--max-concepts", cap.max_concepts, "Most concepts injected at once");

  GenerateArgs vqa;
  auto* c_vqa = app.add_subcommand("vqa", "Answer a question about an image");
  c_vqa->add_option("image", vqa.image, "Image file")->required();
  c_vqa->add_option("--question,-q", vqa.question, "Question")->required();
  c_vqa->add_option("--concepts", vqa.concepts, "'all' or comma-separated concept ids");
  c_vqa->add_option("--face-probes", vqa.face_probes, "JSON file with face probe vectors");
  c_vqa->add_option("--max-concepts", vqa.max_concepts, "Most concepts injected at once");

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Cross-validated evaluation on concept folders or the synthetic suite");
  c_eval->add_option("--folds", ev.folds, "Folds per concept");
  c_eval->add_option("--train-size", ev.train_size, "Training images per fold");
  c_eval->add_option("--data", ev.data, "Folder of concept folders (default: synthetic suite)");
  c_eval->add_option("--concepts", ev.concepts, "Synthetic suite: number of concepts");
  c_eval->add_option("--images", ev.images, "Synthetic suite: images per concept");
  c_eval->add_option("--people", ev.people, "Synthetic suite: number of people");
  c_eval->add_option("--steps", ev.steps, "Override training steps");
  c_eval->add_flag("--no-heads", ev.no_heads, "Inject on every validation image");
  c_eval->add_option("--out", ev.out, "Write the JSON report here");
  c_eval->add_option("--csv", ev.csv, "Write per-fold rows as CSV here");

  PretrainArgs pre;
  auto* c_pre = app.add_subcommand("pretrain", "Train a toy model from scratch on the synthetic world");
  c_pre->add_option("--steps", pre.steps, "Optimizer steps");
  c_pre->add_option("--scenes", pre.scenes, "Training scenes");
  c_pre->add_option("--out", pre.out, "Output file (default: <model>/<mode>.tvlm)");

  auto* c_serve = app.add_subcommand("serve", "Serve the HTTP API");
  std::string port_flag;
  auto* opt_port = c_serve->add_option("--port", port_flag, "Port to listen on");
  std::string token_flag;
  auto* opt_token = c_serve->add_option("--token", token_flag, "Require this bearer token");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitUsage;
  }

  try {
    cli::Settings defaults;
    defaults.model_path = MYCONCEPT_DEFAULT_MODEL_DIR;
    cli::ValueMap flags;
    if (opt_store->count()) flags["store_dir"] = g.store_dir;
    if (opt_model->count()) flags["model_path"] = g.model_path;
    if (opt_mode->count()) flags["mode"] = g.mode;
    if (opt_seed->count()) flags["seed"] = std::to_string(g.seed);
    if (opt_threads->count()) flags["threads"] = std::to_string(g.threads);
    if (opt_port->count()) flags["port"] = port_flag;
    if (opt_token->count()) flags["token"] = token_flag;
    const cli::ValueMap file = g.config.empty() ? cli::ValueMap{} : cli::read_config_file(g.config);
    g.settings = cli::resolve_settings(defaults, file, cli::environment_values(), flags);

    if (*c_synth) return run_synth(g, synth);
    if (*c_ingest) return run_ingest(g, ingest_dir);
    if (*c_head) return run_train_head(g, head);
    if (*c_emb) return run_train_embedding(g, emb);
    if (*c_cap) return run_generate(g, cap, false);
    if (*c_vqa) return run_generate(g, vqa, true);
    if (*c_eval) return run_eval(g, ev);
    if (*c_pre) return run_pretrain(g, pre);
    if (*c_serve) return run_serve(g);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const TokenizerError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConflictError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NotFoundError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
