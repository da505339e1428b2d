// Copyright 2026 The MyConcept Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include "myconcept/heads/embedder.hpp"
#include "myconcept/heads/heads.hpp"
#include "myconcept/injection/injection.hpp"
#include "myconcept/io/image_io.hpp"
#include "myconcept/service/jobs.hpp"
#include "myconcept/store/concept_store.hpp"
#include "myconcept/store/ingest.hpp"
#include "myconcept/store/synthetic.hpp"
#include "myconcept/trainer/trainer.hpp"
#include "myconcept/vlm/checkpoint.hpp"
#include "myconcept/vlm/pretrain.hpp"

// After Eigen: httplib brings in <resolv.h>, whose _res macro clashes with Eigen internals.
#include <httplib.h>

namespace myconcept::service {

using nlohmann::json;

struct ServiceConfig {
  std::filesystem::path store_dir = "myconcept-store";
  std::string host = "127.0.0.1";
  /// 0 picks a free port.
  int port = 8080;
  /// A .tvlm file, or a directory holding qformer.tvlm and/or prefix.tvlm.
  std::filesystem::path model_path = "models";
  std::optional<vlm::FusionMode> default_mode;
  /// When set, every request except /v1/health needs "Authorization: Bearer <token>".
  std::string bearer_token;
  std::size_t queue_depth = 8;
  int workers = 2;
  /// Synthetic negatives for linear heads of concepts uploaded without any.
  std::size_t n_negatives = 150;
  std::uint64_t negatives_seed = 99;

  /// Fills unset fields from MYCONCEPT_STORE_DIR, MYCONCEPT_PORT,
  /// MYCONCEPT_MODEL_PATH and MYCONCEPT_TOKEN.
  void apply_environment() {
    if (const char* v = std::getenv("MYCONCEPT_STORE_DIR")) store_dir = v;
    if (const char* v = std::getenv("MYCONCEPT_PORT")) port = std::stoi(v);
    if (const char* v = std::getenv("MYCONCEPT_MODEL_PATH")) model_path = v;
    if (const char* v = std::getenv("MYCONCEPT_TOKEN")) bearer_token = v;
  }
};

/// Loads one model file or every known model file in a directory.
inline std::map<vlm::FusionMode, std::unique_ptr<vlm::ToyVlm>> load_models(const std::filesystem::path& path) {
  std::map<vlm::FusionMode, std::unique_ptr<vlm::ToyVlm>> out;
  auto add = [&](const std::filesystem::path& p) {
    auto m = std::make_unique<vlm::ToyVlm>(vlm::load_model(p));
    const auto mode = m->mode();
    out[mode] = std::move(m);
  };
  if (std::filesystem::is_directory(path)) {
    for (const char* name : {"qformer.tvlm", "prefix.tvlm"})
      if (std::filesystem::exists(path / name)) add(path / name);
  } else {
    add(path);
  }
  if (out.empty()) throw InputError("no model found at " + path.string());
  return out;
}

struct HttpError {
  int status;
  std::string code;
  std::string message;
  json detail = nullptr;
};

inline json error_body(const std::string& code, const std::string& message, const json& detail = nullptr) {
  return {{"code", code}, {"message", message}, {"detail", detail}};
}

/// HTTP facade over the store, the heads, the trainer and the frozen models.
class Service {
 public:
  Service(ServiceConfig cfg, std::map<vlm::FusionMode, std::unique_ptr<vlm::ToyVlm>> models)
      : cfg_(std::move(cfg)), models_(std::move(models)), store_(cfg_.store_dir), registry_(embedder_.id()),
        jobs_(cfg_.queue_depth, cfg_.workers) {
    if (models_.empty()) throw InputError("service needs at least one model");
    default_mode_ = cfg_.default_mode.value_or(models_.count(vlm::FusionMode::prefix) ? vlm::FusionMode::prefix
                                                                                     : models_.begin()->first);
    if (!models_.count(default_mode_)) throw InputError("default mode has no loaded model");
    restore();
    routes();
  }

  explicit Service(ServiceConfig cfg) : Service(cfg, load_models(cfg.model_path)) {}

  ~Service() { stop(); }

  /// Binds and serves on a background thread; returns the bound port.
  int start() {
    if (cfg_.port == 0) {
      port_ = server_.bind_to_any_port(cfg_.host);
    } else {
      port_ = server_.bind_to_port(cfg_.host, cfg_.port) ? cfg_.port : -1;
    }
    if (port_ < 0) throw Error("cannot bind " + cfg_.host + ":" + std::to_string(cfg_.port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  /// Serves on the calling thread until stop().
  void run() {
    if (!server_.listen(cfg_.host, cfg_.port)) throw Error("cannot bind " + cfg_.host + ":" + std::to_string(cfg_.port));
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
    jobs_.shutdown();
  }

  int port() const { return port_; }
  const JobQueue& jobs() const { return jobs_; }
  vlm::FusionMode default_mode() const { return default_mode_; }
  const vlm::ToyVlm& model(vlm::FusionMode m) const { return *models_.at(m); }

 private:
  // ---- state -------------------------------------------------------------

  void restore() {
    const auto metas = store_.list();
    // Slots bound by stored records first, so fresh registrations cannot take them.
    for (const auto& m : metas)
      for (auto& [mode, model] : models_)
        if (auto rec = store_.latest(m.concept_id, mode)) {
          model->tokenizer().claim_slot(rec->identifier, rec->identifier_token);
          install(*rec);
        }
    for (const auto& m : metas)
      for (auto& [mode, model] : models_)
        if (!model->tokenizer().find(m.identifier)) model->tokenizer().register_identifier(m.identifier);
  }

  void install(const store::ConceptRecord& rec) {
    std::unique_lock lock(state_mutex_);
    trained_[rec.concept_id][rec.mode] = rec;
    if (rec.head) registry_.put(rec.concept_id, {*rec.head, rec.identifier});
  }

  void forget(const std::string& concept_id) {
    std::unique_lock lock(state_mutex_);
    trained_.erase(concept_id);
    registry_.remove(concept_id);
  }

  std::optional<store::ConceptRecord> trained(const std::string& concept_id, vlm::FusionMode mode) const {
    std::shared_lock lock(state_mutex_);
    auto it = trained_.find(concept_id);
    if (it == trained_.end()) return std::nullopt;
    auto jt = it->second.find(mode);
    if (jt == it->second.end()) return std::nullopt;
    return jt->second;
  }

  const std::vector<Vector>& shared_negatives() {
    std::call_once(negatives_once_, [&] {
      Rng rng(cfg_.negatives_seed);
      for (const auto& img : store::negative_scenes(cfg_.n_negatives, {}, rng))
        negatives_.push_back(embedder_.embed(img));
    });
    return negatives_;
  }

  json concept_json(const store::ConceptMeta& m) const {
    json j = store::to_json(m);
    std::size_t n_images = 0;
    const auto images = store_.concept_dir(m.concept_id) / "images";
    if (std::filesystem::is_directory(images))
      for (const auto& e : std::filesystem::directory_iterator(images)) n_images += io::has_image_extension(e.path());
    j["n_images"] = n_images;
    json versions = json::object();
    std::string head = "none";
    for (const auto& [mode, model] : models_) {
      auto rec = trained(m.concept_id, mode);
      versions[vlm::to_string(mode)] = rec ? json(rec->version) : json(nullptr);
      if (rec && rec->head) head = std::holds_alternative<heads::LinearHead>(*rec->head) ? "linear" : "gallery";
    }
    j["trained"] = versions;
    j["head"] = head;
    j["active_job"] = jobs_.has_active_job(m.concept_id);
    return j;
  }

  // ---- request helpers ---------------------------------------------------

  static void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static json parse_json_body(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    try {
      return json::parse(req.body);
    } catch (const json::exception& e) {
      throw HttpError{400, "bad_request", "request body is not valid JSON", e.what()};
    }
  }

  static std::optional<std::string> form_value(const httplib::Request& req, const std::string& key) {
    if (req.has_file(key)) return req.get_file_value(key).content;
    if (req.has_param(key)) return req.get_param_value(key);
    return std::nullopt;
  }

  static Image form_image(const httplib::Request& req) {
    if (!req.has_file("image")) throw HttpError{422, "validation_error", "multipart field 'image' is required"};
    const auto file = req.get_file_value("image");
    try {
      return io::to_model_input(io::decode_image({file.content.begin(), file.content.end()},
                                                 file.filename.empty() ? "image" : file.filename));
    } catch (const InputError& e) {
      throw HttpError{422, "invalid_image", e.what(), file.filename};
    }
  }

  static json form_json(const httplib::Request& req, const std::string& key) {
    auto v = form_value(req, key);
    if (!v || v->empty()) return nullptr;
    try {
      return json::parse(*v);
    } catch (const json::exception&) {
      throw HttpError{422, "validation_error", "field '" + key + "' is not valid JSON", key};
    }
  }

  vlm::FusionMode mode_from(const json& j, const char* key) const {
    if (!j.is_object() || !j.contains(key) || j[key].is_null()) return default_mode_;
    vlm::FusionMode m;
    try {
      m = vlm::fusion_mode_from_string(j[key].get<std::string>());
    } catch (const std::exception&) {
      throw HttpError{422, "validation_error", "mode must be 'qformer' or 'prefix'", key};
    }
    if (!models_.count(m)) throw HttpError{422, "mode_unavailable", "no model loaded for mode " + vlm::to_string(m)};
    return m;
  }

  store::ConceptMeta require_concept(const std::string& id) const {
    auto m = store_.get(id);
    if (!m) throw HttpError{404, "not_found", "unknown concept", id};
    return *m;
  }

  std::vector<Vector> face_probes(const httplib::Request& req) const {
    std::vector<Vector> out;
    const json j = form_json(req, "face_probes");
    if (j.is_null()) return out;
    try {
      for (const auto& p : j) out.push_back(to_vector(p.get<std::vector<double>>()));
    } catch (const json::exception&) {
      throw HttpError{422, "validation_error", "face_probes must be a list of number lists", "face_probes"};
    }
    return out;
  }

  /// Runs the heads, then picks the fired concepts that have a trained vector.
  std::pair<json, std::vector<vlm::InjectedConcept>> detect_and_select(const Image& img,
                                                                        const std::vector<Vector>& probes,
                                                                        vlm::FusionMode mode, std::size_t limit,
                                                                        std::vector<std::string>& injected_ids) const {
    json detections = json::array();
    std::vector<vlm::InjectedConcept> injected;
    const auto found = registry_.detect(embedder_.features(img), probes);
    for (const auto& d : found) {
      auto rec = trained(d.concept_id, mode);
      const bool use = d.fired && rec && rec->embedding && injected.size() < limit;
      if (use) {
        injected.push_back({*rec->embedding, rec->identifier_token});
        injected_ids.push_back(d.concept_id);
      }
      json dj = {{"concept_id", d.concept_id}, {"score", d.score}, {"fired", d.fired}, {"injected", use}};
      if (auto entry = registry_.get(d.concept_id)) dj["identifier"] = entry->identifier;
      dj["distance"] = d.distance ? json(*d.distance) : json(nullptr);
      detections.push_back(dj);
    }
    return {detections, injected};
  }

  // ---- training ----------------------------------------------------------

  trainer::TrainingConfig training_config(const json& body, vlm::FusionMode mode, bool person) const {
    trainer::TrainingConfig c = trainer::TrainingConfig::toy(mode, person);
    try {
      if (body.contains("steps")) c.steps = body["steps"].get<int>();
      if (body.contains("lambda")) c.lambda_reg = body["lambda"].get<double>();
      if (body.contains("learning_rate")) c.learning_rate = body["learning_rate"].get<double>();
      if (body.contains("seed")) c.seed = body["seed"].get<std::uint64_t>();
      if (body.contains("task")) c.mode = trainer::task_mode_from_string(body["task"].get<std::string>());
      if (body.contains("augment") && !body["augment"].get<bool>()) c.augment = trainer::AugmentSwitches::none();
      c.validate();
      if (c.steps < 1) throw InputError("steps must be positive");
    } catch (const json::exception& e) {
      throw HttpError{422, "validation_error", "bad training option", e.what()};
    } catch (const InputError& e) {
      throw HttpError{422, "validation_error", e.what()};
    }
    return c;
  }

  void train_concept(JobContext& ctx, const std::string& concept_id, vlm::FusionMode mode,
                     const trainer::TrainingConfig& tc, const heads::HeadTrainConfig& hc) {
    store::ConceptDataset ds;
    {
      std::lock_guard lock(upload_mutex_);
      ds = store::ingest_concept_dir(store_.concept_dir(concept_id));
    }
    // Heads first: the embedding is only useful once the concept can be recognised.
    heads::ConceptHead head;
    if (ds.type == "person" && !ds.face_probes.empty()) {
      ctx.set_phase("head", 1);
      std::vector<Vector> refs;
      for (const auto& p : ds.face_probes) refs.push_back(to_vector(p));
      head = heads::GalleryHead(refs);
      ctx.progress(1);
    } else {
      ctx.set_phase("head", hc.steps);
      std::vector<Vector> pos, neg;
      for (const auto& img : ds.images) pos.push_back(embedder_.embed(img));
      if (!ds.negatives.empty()) {
        for (const auto& img : ds.negatives) neg.push_back(embedder_.embed(img));
      } else {
        neg = shared_negatives();
      }
      head = heads::train_linear_head(pos, neg, hc);
      ctx.progress(hc.steps);
    }

    vlm::ToyVlm& model = *models_.at(mode);
    model.tokenizer().register_identifier(ds.identifier);
    ctx.set_phase("embedding", tc.steps);
    const auto samples = trainer::samples_from_dataset(ds, [&] {
      std::vector<std::size_t> all(ds.size());
      std::iota(all.begin(), all.end(), 0);
      return all;
    }());
    const auto result = trainer::optimize_embedding(model, samples, ds.identifier, tc,
                                                    [&](const trainer::StepRecord& r, int) {
                                                      if (ctx.cancelled()) throw Error("training cancelled");
                                                      ctx.progress(r.step + 1, {{"step", r.step},
                                                                                {"loss", r.loss},
                                                                                {"ce", r.ce},
                                                                                {"reg", r.reg},
                                                                                {"grad_norm", r.grad_norm}});
                                                    });
    store::ConceptRecord rec;
    rec.concept_id = ds.concept_id;
    rec.name = ds.name;
    rec.identifier = ds.identifier;
    rec.category = ds.category;
    rec.type = ds.type;
    rec.mode = mode;
    rec.identifier_token = result.embedding.identifier_token;
    rec.embedding = result.embedding.vector;
    rec.head = head;
    rec.head_embedder = embedder_.id();
    rec.provenance = {{"job_id", ctx.job_id()},
                      {"steps", tc.steps},
                      {"lambda", tc.lambda_reg},
                      {"seed", tc.seed},
                      {"task", trainer::to_string(tc.mode)},
                      {"n_images", ds.size()},
                      {"model_checksum", model.parameter_checksum()}};
    if (!store_.get(concept_id)) throw Error("concept was deleted during training");
    rec = store_.commit(rec);
    install(rec);
    ctx.set_version(rec.version);
  }

  // ---- routes ------------------------------------------------------------

  template <typename F>
  auto guarded(F f) {
    return [this, f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const HttpError& e) {
        reply(res, e.status, error_body(e.code, e.message, e.detail));
      } catch (const TokenizerError& e) {
        reply(res, 422, error_body("unknown_token", e.what(), {{"token", e.token()}}));
      } catch (const ConflictError& e) {
        reply(res, 409, error_body("conflict", e.what()));
      } catch (const QueueFullError& e) {
        reply(res, 429, error_body("queue_full", e.what()));
      } catch (const NotFoundError& e) {
        reply(res, 404, error_body("not_found", e.what()));
      } catch (const ValidationError& e) {
        reply(res, 422, error_body("validation_error", e.what(), e.path()));
      } catch (const InputError& e) {
        reply(res, 422, error_body("validation_error", e.what()));
      } catch (const std::exception& e) {
        reply(res, 500, error_body("internal", e.what()));
      }
    };
  }

  void routes() {
    server_.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
      if (cfg_.bearer_token.empty() || req.path == "/v1/health") return httplib::Server::HandlerResponse::Unhandled;
      if (req.get_header_value("Authorization") == "Bearer " + cfg_.bearer_token)
        return httplib::Server::HandlerResponse::Unhandled;
      reply(res, 401, error_body("unauthorized", "missing or wrong bearer token"));
      return httplib::Server::HandlerResponse::Handled;
    });
    server_.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
      if (!res.body.empty()) return;
      if (res.status == 404) reply(res, 404, error_body("not_found", "no such endpoint", req.path));
    });

    server_.Get("/v1/health", guarded([this](const httplib::Request&, httplib::Response& res) {
      json modes = json::array();
      for (const auto& kv : models_) modes.push_back(vlm::to_string(kv.first));
      reply(res, 200, {{"status", "ok"}, {"modes", modes}, {"default_mode", vlm::to_string(default_mode_)}});
    }));

    server_.Post("/v1/concepts", guarded([this](const httplib::Request& req, httplib::Response& res) {
      store::ConceptMeta meta;
      try {
        meta = store::meta_from_json(parse_json_body(req), "request body");
      } catch (const ValidationError& e) {
        throw HttpError{422, "validation_error", e.what()};
      }
      meta.concept_id.clear();
      meta.created_at.clear();
      // Check the identifier against every tokenizer before anything is written.
      for (auto& [mode, model] : models_) {
        const auto id = model->tokenizer().find(meta.identifier);
        if (id && !model->tokenizer().is_name_slot(*id))
          throw HttpError{422, "validation_error", "identifier collides with a vocabulary word", meta.identifier};
        if (split_single(meta.identifier) != meta.identifier)
          throw HttpError{422, "validation_error", "identifier must be a single lower-case word", meta.identifier};
      }
      std::lock_guard lock(create_mutex_);
      meta = store_.create(meta);
      try {
        for (auto& [mode, model] : models_) model->tokenizer().register_identifier(meta.identifier);
      } catch (const InputError& e) {
        store_.remove(meta.concept_id);
        throw HttpError{422, "validation_error", e.what(), meta.identifier};
      }
      reply(res, 201, concept_json(meta));
    }));

    server_.Get("/v1/concepts", guarded([this](const httplib::Request&, httplib::Response& res) {
      json out = json::array();
      for (const auto& m : store_.list()) out.push_back(concept_json(m));
      reply(res, 200, out);
    }));

    server_.Get(R"(/v1/concepts/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      reply(res, 200, concept_json(require_concept(req.matches[1])));
    }));

    server_.Delete(R"(/v1/concepts/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      require_concept(id);
      if (jobs_.has_active_job(id)) throw HttpError{409, "conflict", "concept has an active training job", id};
      std::lock_guard lock(upload_mutex_);
      store_.remove(id);
      forget(id);
      res.status = 204;
    }));

    server_.Post(R"(/v1/concepts/([^/]+)/images)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      require_concept(id);
      const auto caption = form_value(req, "caption");
      if (!caption) throw HttpError{422, "validation_error", "multipart field 'caption' is required", "caption"};
      if (store::count_placeholders(*caption) != 1)
        throw HttpError{422, "validation_error",
                        "caption must contain " + std::string(store::kPlaceholder) + " exactly once", *caption};
      std::vector<std::string> variants;
      if (json v = form_json(req, "variants"); !v.is_null()) {
        for (const auto& s : v) {
          if (!s.is_string() || store::count_placeholders(s.get<std::string>()) != 1)
            throw HttpError{422, "validation_error",
                            "every variant must contain " + std::string(store::kPlaceholder) + " exactly once",
                            "variants"};
          variants.push_back(s.get<std::string>());
        }
      }
      const json qa = form_json(req, "qa");
      if (!qa.is_null()) {
        bool ok = qa.is_array();
        for (const auto& p : qa) ok = ok && p.is_object() && p.contains("question") && p.contains("answer");
        if (!ok) throw HttpError{422, "validation_error", "qa must be a list of {question, answer}", "qa"};
      }
      const json probe = form_json(req, "face_probe");
      const Image img = form_image(req);

      std::lock_guard lock(upload_mutex_);
      const auto dir = store_.concept_dir(id);
      auto load = [&](const char* name) {
        return std::filesystem::exists(dir / name) ? store::detail::read_json_file(dir / name) : json::object();
      };
      json captions = load("captions.json"), vjson = load("variants.json"), qjson = load("qa.json"),
           pjson = load("face_probes.json");
      std::size_t n = 0;
      while (std::filesystem::exists(dir / "images" / image_name(n))) ++n;
      const std::string name = image_name(n);
      io::save_png(img, dir / "images" / name);
      captions[name] = *caption;
      if (!variants.empty()) vjson[name] = variants;
      if (!qa.is_null()) qjson[name] = qa;
      if (!probe.is_null()) pjson[name] = probe;
      auto save = [&](const char* fname, const json& j) {
        if (j.empty()) return;
        const std::string text = j.dump(2);
        io::write_file_atomic(dir / fname, std::vector<std::uint8_t>(text.begin(), text.end()));
      };
      save("captions.json", captions);
      save("variants.json", vjson);
      save("qa.json", qjson);
      save("face_probes.json", pjson);
      reply(res, 201, {{"concept_id", id}, {"image_id", name}, {"n_images", n + 1}});
    }));

    server_.Post(R"(/v1/concepts/([^/]+)/train)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      const auto meta = require_concept(id);
      const json body = parse_json_body(req);
      const vlm::FusionMode mode = mode_from(body, "mode");
      const auto tc = training_config(body, mode, meta.type == "person");
      heads::HeadTrainConfig hc;
      if (body.contains("head_steps")) hc.steps = body["head_steps"].get<int>();
      hc.seed = tc.seed;
      if (!std::filesystem::is_directory(store_.concept_dir(id) / "images") ||
          std::filesystem::is_empty(store_.concept_dir(id) / "images"))
        throw HttpError{422, "validation_error", "upload at least one image before training", id};
      const std::string job_id = jobs_.submit(id, vlm::to_string(mode), [this, id, mode, tc, hc](JobContext& ctx) {
        train_concept(ctx, id, mode, tc, hc);
      });
      reply(res, 202, {{"job_id", job_id}, {"concept_id", id}, {"mode", vlm::to_string(mode)}});
    }));

    server_.Get("/v1/jobs", guarded([this](const httplib::Request&, httplib::Response& res) {
      json out = json::array();
      for (const auto& j : jobs_.list()) out.push_back(to_json(j));
      reply(res, 200, out);
    }));

    server_.Get(R"(/v1/jobs/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto job = jobs_.get(req.matches[1]);
      if (!job) throw HttpError{404, "not_found", "unknown job", std::string(req.matches[1])};
      reply(res, 200, to_json(*job));
    }));

    server_.Post("/v1/caption", guarded([this](const httplib::Request& req, httplib::Response& res) {
      json options = form_json(req, "options");
      if (options.is_null()) options = json::object();
      const vlm::FusionMode mode = mode_from(options, "mode");
      const std::size_t limit = options.value("max_concepts", 3);
      const Image img = form_image(req);
      std::vector<std::string> injected_ids;
      auto [detections, injected] = detect_and_select(img, face_probes(req), mode, limit, injected_ids);
      const vlm::ToyVlm& model = *models_.at(mode);
      const auto trace = model.generate(model.encode_image(img), vlm::kCaptionInstruction, injected, {});
      json out = {{"text", trace.text}, {"mode", vlm::to_string(mode)}, {"detections", detections}};
      out["attention_map"] = nullptr;
      if (options.value("attention_map", false) && mode == vlm::FusionMode::prefix && !trace.concept_positions.empty()) {
        const int layer = options.value("attention_layer", model.config().decoder_layers - 1);
        const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(model.encoder().config().max_patches))));
        const auto map = injection::extract_concept_attention_map(trace, trace.concept_positions.front(), layer, side, side);
        out["attention_map"] = {{"concept_id", injected_ids.front()},
                                {"layer", layer},
                                {"grid_height", map.grid_height},
                                {"grid_width", map.grid_width},
                                {"weights", map.weights}};
      }
      reply(res, 200, out);
    }));

    server_.Post("/v1/vqa", guarded([this](const httplib::Request& req, httplib::Response& res) {
      json options = form_json(req, "options");
      if (options.is_null()) options = json::object();
      const vlm::FusionMode mode = mode_from(options, "mode");
      const auto question = form_value(req, "question");
      if (!question || question->empty())
        throw HttpError{422, "validation_error", "multipart field 'question' is required", "question"};
      const vlm::ToyVlm& model = *models_.at(mode);
      model.encode_text(*question);  // unknown words surface as 422 naming the token
      const Image img = form_image(req);
      std::vector<std::string> injected_ids;
      auto [detections, injected] =
          detect_and_select(img, face_probes(req), mode, options.value("max_concepts", 3), injected_ids);
      // Identifiers named in the question are injected even when no head fired.
      const auto words = vlm::split_words(*question);
      for (const auto& m : store_.list()) {
        if (std::find(words.begin(), words.end(), m.identifier) == words.end()) continue;
        if (std::find(injected_ids.begin(), injected_ids.end(), m.concept_id) != injected_ids.end()) continue;
        auto rec = trained(m.concept_id, mode);
        if (!rec || !rec->embedding) continue;
        injected.push_back({*rec->embedding, rec->identifier_token});
        injected_ids.push_back(m.concept_id);
      }
      const auto trace = model.generate(model.encode_image(img), *question, injected, {});
      reply(res, 200, {{"answer", trace.text}, {"mode", vlm::to_string(mode)}, {"detections", detections},
                       {"injected", injected_ids}});
    }));
  }

  static std::string split_single(const std::string& s) {
    const auto w = vlm::split_words(s);
    return w.size() == 1 ? w.front() : std::string();
  }

  static std::string image_name(std::size_t n) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%03zu.png", n);
    return buf;
  }

  ServiceConfig cfg_;
  std::map<vlm::FusionMode, std::unique_ptr<vlm::ToyVlm>> models_;
  vlm::FusionMode default_mode_ = vlm::FusionMode::qformer;
  store::ConceptStore store_;
  heads::ColorAdjacencyEmbedder embedder_;
  heads::HeadRegistry registry_;
  mutable std::shared_mutex state_mutex_;
  std::map<std::string, std::map<vlm::FusionMode, store::ConceptRecord>> trained_;
  std::once_flag negatives_once_;
  std::vector<Vector> negatives_;
  std::mutex upload_mutex_;
  std::mutex create_mutex_;
  JobQueue jobs_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace myconcept::service
