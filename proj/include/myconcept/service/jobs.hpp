// Copyright 2026 The MyConcept Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>

#include <condition_variable>
#include <cstdio>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "myconcept/core/errors.hpp"

namespace myconcept::service {

enum class JobState { queued, running, done, failed };

inline const char* to_string(JobState s) {
  switch (s) {
    case JobState::queued: return "queued";
    case JobState::running: return "running";
    case JobState::done: return "done";
    case JobState::failed: return "failed";
  }
  return "unknown";
}

struct Job {
  std::string id;
  std::string concept_id;
  std::string mode;
  JobState state = JobState::queued;
  std::string phase;
  int step = 0;
  int steps = 0;
  nlohmann::json history_tail = nlohmann::json::array();
  std::optional<std::string> error;
  std::optional<int> version;
  /// Every state the job has been in, oldest first.
  std::vector<JobState> transitions{JobState::queued};
};

inline nlohmann::json to_json(const Job& j) {
  nlohmann::json out = {{"job_id", j.id},
                        {"concept_id", j.concept_id},
                        {"mode", j.mode},
                        {"state", to_string(j.state)},
                        {"phase", j.phase},
                        {"progress", {{"step", j.step}, {"steps", j.steps}}},
                        {"history_tail", j.history_tail}};
  out["error"] = j.error ? nlohmann::json(*j.error) : nlohmann::json(nullptr);
  out["version"] = j.version ? nlohmann::json(*j.version) : nlohmann::json(nullptr);
  return out;
}

class QueueFullError : public Error {
 public:
  using Error::Error;
};

/// Handle a running job uses to publish progress.
class JobContext;

/// Bounded FIFO of training jobs served by a fixed set of worker threads. A concept
/// has at most one job that is queued or running at any time.
class JobQueue {
 public:
  using Work = std::function<void(JobContext&)>;

  JobQueue(std::size_t max_queued = 8, int workers = 2) : max_queued_(max_queued) {
    for (int i = 0; i < workers; ++i) threads_.emplace_back([this] { worker(); });
  }
  ~JobQueue() { shutdown(); }
  JobQueue(const JobQueue&) = delete;
  JobQueue& operator=(const JobQueue&) = delete;

  /// Enqueues `work` for `concept_id`. Throws ConflictError when the concept already
  /// has an active job and QueueFullError when the queue is at capacity.
  std::string submit(const std::string& concept_id, const std::string& mode, Work work) {
    std::lock_guard lock(mutex_);
    if (stopping_) throw Error("job queue is shutting down");
    if (active_.count(concept_id)) throw ConflictError("concept '" + concept_id + "' already has an active job");
    if (pending_.size() >= max_queued_) throw QueueFullError("training queue is full");
    char buf[24];
    std::snprintf(buf, sizeof buf, "j%06d", ++counter_);
    auto job = std::make_shared<Job>();
    job->id = buf;
    job->concept_id = concept_id;
    job->mode = mode;
    jobs_[job->id] = job;
    active_[concept_id] = job->id;
    pending_.push_back({job, std::move(work)});
    cv_.notify_one();
    return job->id;
  }

  std::optional<Job> get(const std::string& id) const {
    std::lock_guard lock(mutex_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) return std::nullopt;
    return *it->second;
  }

  std::vector<Job> list() const {
    std::lock_guard lock(mutex_);
    std::vector<Job> out;
    for (const auto& kv : jobs_) out.push_back(*kv.second);
    return out;
  }

  bool has_active_job(const std::string& concept_id) const {
    std::lock_guard lock(mutex_);
    return active_.count(concept_id) > 0;
  }

  std::size_t queued() const {
    std::lock_guard lock(mutex_);
    return pending_.size();
  }

  /// Highest number of jobs for one concept that were running at the same time.
  int max_running_per_concept() const {
    std::lock_guard lock(mutex_);
    return max_running_per_concept_;
  }

  void shutdown() {
    {
      std::lock_guard lock(mutex_);
      if (stopping_) return;
      stopping_ = true;
      for (auto& p : pending_) {
        p.job->state = JobState::failed;
        p.job->transitions.push_back(JobState::failed);
        p.job->error = "service shut down before the job started";
        active_.erase(p.job->concept_id);
      }
      pending_.clear();
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
    threads_.clear();
  }

 private:
  friend class JobContext;

  struct Pending {
    std::shared_ptr<Job> job;
    Work work;
  };

  void worker();

  void update(const std::shared_ptr<Job>& job, const std::function<void(Job&)>& fn) {
    std::lock_guard lock(mutex_);
    fn(*job);
  }

  std::size_t max_queued_;
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<Pending> pending_;
  std::map<std::string, std::shared_ptr<Job>> jobs_;
  std::map<std::string, std::string> active_;
  std::map<std::string, int> running_per_concept_;
  int max_running_per_concept_ = 0;
  std::vector<std::thread> threads_;
  bool stopping_ = false;
  int counter_ = 0;
};

class JobContext {
 public:
  JobContext(JobQueue& q, std::shared_ptr<Job> job) : queue_(q), job_(std::move(job)) {}

  const std::string& job_id() const { return job_->id; }

  void set_phase(const std::string& phase, int steps) {
    queue_.update(job_, [&](Job& j) {
      j.phase = phase;
      j.step = 0;
      j.steps = steps;
    });
  }
  void progress(int step, const nlohmann::json& record = nullptr) {
    queue_.update(job_, [&](Job& j) {
      j.step = step;
      if (!record.is_null()) {
        j.history_tail.push_back(record);
        if (j.history_tail.size() > kTail) j.history_tail.erase(j.history_tail.begin());
      }
    });
  }
  void set_version(int v) {
    queue_.update(job_, [&](Job& j) { j.version = v; });
  }
  /// True once the queue is shutting down; long work should stop early.
  bool cancelled() const {
    std::lock_guard lock(queue_.mutex_);
    return queue_.stopping_;
  }

 private:
  static constexpr std::size_t kTail = 10;
  JobQueue& queue_;
  std::shared_ptr<Job> job_;
};

inline void JobQueue::worker() {
  for (;;) {
    Pending p;
    {
      std::unique_lock lock(mutex_);
      cv_.wait(lock, [&] { return stopping_ || !pending_.empty(); });
      if (stopping_) return;
      p = std::move(pending_.front());
      pending_.pop_front();
      p.job->state = JobState::running;
      p.job->transitions.push_back(JobState::running);
      const int running = ++running_per_concept_[p.job->concept_id];
      max_running_per_concept_ = std::max(max_running_per_concept_, running);
    }
    JobContext ctx(*this, p.job);
    std::optional<std::string> error;
    try {
      p.work(ctx);
    } catch (const std::exception& e) {
      error = e.what();
    } catch (...) {
      error = "unknown failure";
    }
    std::lock_guard lock(mutex_);
    p.job->state = error ? JobState::failed : JobState::done;
    p.job->transitions.push_back(p.job->state);
    p.job->error = error;
    --running_per_concept_[p.job->concept_id];
    active_.erase(p.job->concept_id);
  }
}

}  // namespace myconcept::service
