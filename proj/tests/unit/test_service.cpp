// Copyright 2026 The MyConcept Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <chrono>
#include <filesystem>
#include <future>
#include <latch>
#include <random>
#include <thread>

#include "myconcept/service/server.hpp"

namespace {

using namespace myconcept;
using nlohmann::json;
namespace fs = std::filesystem;

std::string png_of(const Image& img) {
  const auto bytes = io::encode_png(img);
  return {bytes.begin(), bytes.end()};
}

class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override {
    if (!fs::exists(fs::path(MYCONCEPT_MODEL_DIR) / "prefix.tvlm")) GTEST_SKIP() << "bundled models missing";
    static std::mt19937_64 rng(std::random_device{}());
    dir_ = fs::temp_directory_path() / ("myconcept-service-" + std::to_string(rng()));
    start();
    store::SuiteOptions so;
    so.n_concepts = 2;
    so.images_per_concept = 6;
    so.n_negatives = 60;
    so.seed = 5;
    suite_ = store::generate_synthetic_suite(so);
  }

  void start(const std::string& token = {}) {
    service::ServiceConfig cfg;
    cfg.store_dir = dir_;
    cfg.port = 0;
    cfg.model_path = MYCONCEPT_MODEL_DIR;
    cfg.bearer_token = token;
    cfg.n_negatives = 60;
    svc_.reset();
    svc_ = std::make_unique<service::Service>(cfg);
    client_ = std::make_unique<httplib::Client>("127.0.0.1", svc_->start());
    client_->set_read_timeout(120, 0);
    if (!token.empty()) client_->set_bearer_token_auth(token);
  }

  void TearDown() override {
    client_.reset();
    svc_.reset();
    if (!dir_.empty()) fs::remove_all(dir_);
  }

  std::string create(const std::string& identifier, int expect = 201) {
    json body = {{"name", "thing " + identifier}, {"identifier", identifier}, {"category", "square"}, {"type", "object"}};
    auto res = client_->Post("/v1/concepts", body.dump(), "application/json");
    EXPECT_TRUE(res);
    EXPECT_EQ(res->status, expect) << res->body;
    return res->status == 201 ? json::parse(res->body)["concept_id"].get<std::string>() : "";
  }

  httplib::Result upload(const std::string& id, const Image& img, const std::string& caption) {
    httplib::MultipartFormDataItems items = {{"image", png_of(img), "x.png", "image/png"},
                                             {"caption", caption, "", ""}};
    return client_->Post("/v1/concepts/" + id + "/images", items);
  }

  json wait_for_job(const std::string& job_id) {
    for (int i = 0; i < 1200; ++i) {
      auto res = client_->Get("/v1/jobs/" + job_id);
      const json j = json::parse(res->body);
      if (j["state"] == "done" || j["state"] == "failed") return j;
      std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
    ADD_FAILURE() << "job did not finish";
    return {};
  }

  fs::path dir_;
  store::SyntheticSuite suite_;
  std::unique_ptr<service::Service> svc_;
  std::unique_ptr<httplib::Client> client_;
};

TEST_F(ServiceTest, HealthListsModes) {
  auto res = client_->Get("/v1/health");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  const json j = json::parse(res->body);
  EXPECT_EQ(j["status"], "ok");
  EXPECT_EQ(j["default_mode"], "prefix");
  EXPECT_EQ(j["modes"].size(), 2u);
}

TEST_F(ServiceTest, RegisterUploadTrainCaptionAnswer) {
  const auto& ds = suite_.concepts[0];
  const std::string id = create(ds.identifier);
  for (std::size_t i = 0; i < 4; ++i) {
    auto res = upload(id, ds.images[i], ds.captions[i]);
    ASSERT_EQ(res->status, 201) << res->body;
    EXPECT_EQ(json::parse(res->body)["n_images"], i + 1);
  }
  auto res = client_->Post("/v1/concepts/" + id + "/train", json{{"seed", 1}}.dump(), "application/json");
  ASSERT_EQ(res->status, 202) << res->body;
  const json job = wait_for_job(json::parse(res->body)["job_id"]);
  ASSERT_EQ(job["state"], "done") << job.dump();
  EXPECT_EQ(job["version"], 1);
  EXPECT_EQ(job["progress"]["step"], job["progress"]["steps"]);
  EXPECT_FALSE(job["history_tail"].empty());

  const json concept_json = json::parse(client_->Get("/v1/concepts/" + id)->body);
  EXPECT_EQ(concept_json["trained"]["prefix"], 1);
  EXPECT_EQ(concept_json["head"], "linear");
  EXPECT_EQ(concept_json["n_images"], 4);

  httplib::MultipartFormDataItems cap = {{"image", png_of(ds.images[5]), "v.png", "image/png"},
                                         {"options", json{{"attention_map", true}}.dump(), "", ""}};
  res = client_->Post("/v1/caption", cap);
  ASSERT_EQ(res->status, 200) << res->body;
  const json c = json::parse(res->body);
  ASSERT_EQ(c["detections"].size(), 1u);
  EXPECT_TRUE(c["detections"][0]["fired"].get<bool>());
  EXPECT_NE(c["text"].get<std::string>().find(ds.identifier), std::string::npos) << c.dump();
  ASSERT_TRUE(c["attention_map"].is_object());
  EXPECT_EQ(c["attention_map"]["weights"].size(), 16u);

  httplib::MultipartFormDataItems q = {{"image", png_of(ds.images[4]), "v.png", "image/png"},
                                       {"question", "where is " + ds.identifier + " ?", "", ""}};
  res = client_->Post("/v1/vqa", q);
  ASSERT_EQ(res->status, 200) << res->body;
  const json a = json::parse(res->body);
  EXPECT_FALSE(a["answer"].get<std::string>().empty());
  EXPECT_EQ(a["injected"], json::array({id}));

  // Records survive a restart.
  start();
  res = client_->Post("/v1/caption", cap);
  EXPECT_EQ(json::parse(res->body)["text"], c["text"]);
}

TEST_F(ServiceTest, ValidationErrors) {
  const std::string id = create("sks");
  create("sks", 409);
  create("red", 422);
  auto res = client_->Post("/v1/concepts", "{bad", "application/json");
  EXPECT_EQ(res->status, 400);
  res = upload(id, suite_.concepts[0].images[0], "a square on a gray background");
  EXPECT_EQ(res->status, 422);
  EXPECT_EQ(json::parse(res->body)["code"], "validation_error");
  res = upload(id, suite_.concepts[0].images[0], "<concept> and <concept>");
  EXPECT_EQ(res->status, 422);
  res = upload("c9999", suite_.concepts[0].images[0], "<concept>");
  EXPECT_EQ(res->status, 404);
  res = client_->Post("/v1/concepts/" + id + "/train", "{}", "application/json");
  EXPECT_EQ(res->status, 422);  // no images yet
  res = client_->Post("/v1/concepts/" + id + "/train", json{{"mode", "fused"}}.dump(), "application/json");
  EXPECT_EQ(res->status, 422);

  httplib::MultipartFormDataItems q = {{"image", png_of(suite_.concepts[0].images[0]), "v.png", "image/png"},
                                       {"question", "where is the zebra ?", "", ""}};
  res = client_->Post("/v1/vqa", q);
  EXPECT_EQ(res->status, 422);
  EXPECT_EQ(json::parse(res->body)["detail"]["token"], "zebra");
  httplib::MultipartFormDataItems bad_image = {{"image", "not an image", "v.png", "image/png"}};
  res = client_->Post("/v1/caption", bad_image);
  EXPECT_EQ(res->status, 422);
  EXPECT_EQ(client_->Get("/v1/jobs/j404")->status, 404);
  EXPECT_EQ(client_->Get("/v1/nothing")->status, 404);
}

TEST_F(ServiceTest, OneRunningJobPerConceptUnderConcurrentRequests) {
  const auto& ds = suite_.concepts[1];
  const std::string id = create(ds.identifier);
  for (std::size_t i = 0; i < 2; ++i) ASSERT_EQ(upload(id, ds.images[i], ds.captions[i])->status, 201);
  const int port = svc_->port();
  // The job runs for a few seconds, so every request arrives while it is active.
  std::latch go(16);
  std::vector<std::future<int>> calls;
  for (int i = 0; i < 16; ++i)
    calls.push_back(std::async(std::launch::async, [port, id, &go] {
      httplib::Client c("127.0.0.1", port);
      go.arrive_and_wait();
      auto res = c.Post("/v1/concepts/" + id + "/train", json{{"steps", 3000}}.dump(), "application/json");
      return res ? res->status : -1;
    }));
  int accepted = 0, conflicts = 0;
  for (auto& f : calls) {
    const int status = f.get();
    accepted += status == 202;
    conflicts += status == 409;
  }
  EXPECT_EQ(accepted, 1);
  EXPECT_EQ(conflicts, 15);
  const auto jobs = json::parse(client_->Get("/v1/jobs")->body);
  ASSERT_EQ(jobs.size(), 1u);
  EXPECT_EQ(client_->Delete("/v1/concepts/" + id)->status, 409);
  EXPECT_EQ(wait_for_job(jobs[0]["job_id"])["state"], "done");
  EXPECT_LE(svc_->jobs().max_running_per_concept(), 1);
  EXPECT_EQ(client_->Delete("/v1/concepts/" + id)->status, 204);
  EXPECT_EQ(client_->Get("/v1/concepts/" + id)->status, 404);
}

TEST_F(ServiceTest, BearerTokenIsEnforced) {
  start("s3cret");
  EXPECT_EQ(client_->Get("/v1/concepts")->status, 200);
  httplib::Client anonymous("127.0.0.1", svc_->port());
  EXPECT_EQ(anonymous.Get("/v1/concepts")->status, 401);
  EXPECT_EQ(anonymous.Get("/v1/health")->status, 200);
}

TEST(JobQueue, RejectsWhenFullAndRecordsTransitions) {
  service::JobQueue q(1, 1);
  std::promise<void> release;
  auto gate = release.get_future().share();
  const auto a = q.submit("c1", "prefix", [gate](service::JobContext&) { gate.wait(); });
  EXPECT_THROW(q.submit("c1", "prefix", [](service::JobContext&) {}), ConflictError);
  // Wait until the first job is running so the queue slot is free again.
  while (q.get(a)->state != service::JobState::running) std::this_thread::sleep_for(std::chrono::milliseconds(1));
  const auto b = q.submit("c2", "prefix", [](service::JobContext& ctx) {
    ctx.set_phase("x", 2);
    ctx.progress(2, {{"loss", 1.0}});
  });
  EXPECT_THROW(q.submit("c3", "prefix", [](service::JobContext&) {}), service::QueueFullError);
  release.set_value();
  while (q.get(b)->state != service::JobState::done) std::this_thread::sleep_for(std::chrono::milliseconds(1));
  const auto job = *q.get(b);
  EXPECT_EQ(job.transitions, (std::vector<service::JobState>{service::JobState::queued, service::JobState::running,
                                                             service::JobState::done}));
  EXPECT_EQ(job.step, 2);
  EXPECT_EQ(job.history_tail.size(), 1u);
  const auto failing = q.submit("c1", "prefix", [](service::JobContext&) { throw std::runtime_error("boom"); });
  while (q.get(failing)->state == service::JobState::queued || q.get(failing)->state == service::JobState::running)
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
  EXPECT_EQ(*q.get(failing)->error, "boom");
}

}  // namespace
