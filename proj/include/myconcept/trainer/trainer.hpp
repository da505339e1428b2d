// Copyright 2026 The MyConcept Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "myconcept/core/image.hpp"
#include "myconcept/core/random.hpp"
#include "myconcept/optim/adamw.hpp"
#include "myconcept/store/dataset.hpp"
#include "myconcept/vlm/backend.hpp"
#include "myconcept/vlm/tokenizer.hpp"

namespace myconcept::trainer {

using vlm::FusionMode;

enum class TaskMode { caption, vqa };

inline std::string to_string(TaskMode m) { return m == TaskMode::caption ? "caption" : "vqa"; }
inline TaskMode task_mode_from_string(const std::string& s) {
  if (s == "caption") return TaskMode::caption;
  if (s == "vqa") return TaskMode::vqa;
  throw InputError("unknown task mode '" + s + "' (expected caption or vqa)");
}

enum class InitStrategy { mean_image_token, zero, random };

struct AugmentSwitches {
  bool hflip = true;
  bool rotation = true;
  bool brightness = true;
  bool caption_variants = true;

  static AugmentSwitches none() { return {false, false, false, false}; }
  bool any_image() const { return hflip || rotation || brightness; }
};

struct AugmentRanges {
  double flip_probability = 0.5;
  double max_rotation_degrees = 15.0;
  double brightness_low = 0.8;
  double brightness_high = 1.2;
};

struct TrainingConfig {
  int steps = 75;
  double learning_rate = 1.0;
  double weight_decay = 0.01;
  double clip_max_norm = 0.05;
  double lambda_reg = 0.04;
  TaskMode mode = TaskMode::caption;
  AugmentSwitches augment;
  AugmentRanges ranges;
  vlm::PenaltyForm penalty_form = vlm::PenaltyForm::per_query;
  InitStrategy init = InitStrategy::mean_image_token;
  double init_noise = 0.02;
  std::string instruction = "please caption this image";
  std::uint64_t seed = 0;

  /// Published settings: qformer fusion runs 75 steps for objects and 100 for
  /// people with lambda 0.04; prefix fusion runs 100 steps with lambda 0.25.
  static TrainingConfig defaults(FusionMode fusion, bool person = false) {
    TrainingConfig c;
    if (fusion == FusionMode::qformer) {
      c.steps = person ? 100 : 75;
      c.lambda_reg = 0.04;
    } else {
      c.steps = 100;
      c.lambda_reg = 0.25;
    }
    return c;
  }

  /// Settings for the bundled toy model; see README for why qformer uses a
  /// smaller lambda at this scale.
  static TrainingConfig toy(FusionMode fusion, bool person = false) {
    TrainingConfig c = defaults(fusion, person);
    if (fusion == FusionMode::qformer) c.lambda_reg = 0.01;
    return c;
  }

  void validate() const {
    if (steps < 0) throw InputError("steps must be non-negative");
    if (!(learning_rate > 0)) throw InputError("learning rate must be positive");
    if (!(clip_max_norm > 0)) throw InputError("clip_max_norm must be positive");
    if (!(lambda_reg >= 0)) throw InputError("lambda must be non-negative");
    if (weight_decay < 0) throw InputError("weight decay must be non-negative");
  }
};

/// One training image with its personalised targets; texts hold the placeholder.
struct TrainSample {
  std::string image_id;
  Image image;
  std::string target_text;
  /// Caption variants including target_text itself.
  std::vector<std::string> variants;
  std::vector<store::QaPair> qa_pairs;
};

/// Builds one sample per image of `ds` (or of the listed indices).
inline std::vector<TrainSample> samples_from_dataset(const store::ConceptDataset& ds,
                                                     const std::vector<std::size_t>& indices) {
  std::vector<TrainSample> out;
  for (std::size_t i : indices) {
    if (i >= ds.size()) throw InputError("image index out of range");
    TrainSample s;
    s.image_id = ds.image_ids[i];
    s.image = ds.images[i];
    s.target_text = ds.captions[i];
    s.variants.push_back(ds.captions[i]);
    if (i < ds.variants.size())
      for (const auto& v : ds.variants[i]) s.variants.push_back(v);
    if (i < ds.qa_pairs.size()) s.qa_pairs = ds.qa_pairs[i];
    out.push_back(std::move(s));
  }
  return out;
}

struct StepRecord {
  int step = 0;
  double loss = 0;
  double ce = 0;
  double reg = 0;
  double grad_norm = 0;
  int image_index = 0;
  int chosen_variant = -1;
  int chosen_qa = -1;
};

struct TrainHistory {
  std::vector<StepRecord> steps;
  int final_version = 0;
  int reinitializations = 0;

  void write_jsonl(std::ostream& out) const {
    for (const auto& r : steps) {
      nlohmann::json j = {{"step", r.step},           {"loss", r.loss},
                          {"ce", r.ce},               {"reg", r.reg},
                          {"grad_norm", r.grad_norm}, {"image_index", r.image_index},
                          {"chosen_variant", r.chosen_variant}, {"chosen_qa", r.chosen_qa}};
      out << j.dump() << '\n';
    }
  }
};

/// Thrown when the loss turns non-finite; carries the steps completed so far.
class TrainingAborted : public Error {
 public:
  TrainingAborted(const std::string& msg, TrainHistory history) : Error(msg), history_(std::move(history)) {}
  const TrainHistory& history() const { return history_; }

 private:
  TrainHistory history_;
};

struct ConceptEmbedding {
  Vector vector;
  FusionMode mode = FusionMode::qformer;
  int identifier_token = -1;
  int version = 0;
};

struct TrainResult {
  ConceptEmbedding embedding;
  TrainHistory history;
};

/// Rescales `grad` to `max_norm` when it is longer; direction is kept.
inline Vector clip_gradient(const Vector& grad, double max_norm) {
  if (!(max_norm > 0)) throw InputError("max_norm must be positive");
  const double n = grad.norm();
  if (n <= max_norm) return grad;
  return grad * (max_norm / n);
}

inline Image augment_image(const Image& img, Rng& rng, const AugmentSwitches& sw, const AugmentRanges& r = {}) {
  Image out = img;
  if (sw.hflip && rng.bernoulli(r.flip_probability)) out = hflip(out);
  if (sw.rotation) out = rotate(out, rng.uniform(-r.max_rotation_degrees, r.max_rotation_degrees));
  if (sw.brightness) out = scale_brightness(out, rng.uniform(r.brightness_low, r.brightness_high));
  return out;
}

inline std::size_t sample_index(std::size_t n, Rng& rng, const char* what) {
  if (n == 0) throw InputError(std::string("cannot sample from an empty ") + what);
  return rng.index(n);
}

inline const std::string& sample_caption(const std::vector<std::string>& variants, Rng& rng) {
  return variants[sample_index(variants.size(), rng, "caption list")];
}

inline const store::QaPair& sample_vqa_pair(const std::vector<store::QaPair>& pairs, Rng& rng) {
  return pairs[sample_index(pairs.size(), rng, "question list")];
}

inline Vector initial_embedding(const vlm::VlmBackend& model, const TrainSample& first, const TrainingConfig& cfg,
                                Rng& rng) {
  const auto dim = static_cast<Eigen::Index>(model.concept_dim());
  switch (cfg.init) {
    case InitStrategy::zero:
      return Vector::Zero(dim);
    case InitStrategy::random:
      return rng.normal_matrix(dim, 1, 1.0).col(0);
    case InitStrategy::mean_image_token:
      break;
  }
  Vector e = model.mean_image_token(model.encode_image(first.image));
  return e + rng.normal_matrix(dim, 1, cfg.init_noise).col(0);
}

using StepCallback = std::function<void(const StepRecord&, int total_steps)>;

/// Learns one concept vector so the frozen model names `identifier` in its output.
inline TrainResult optimize_embedding(const vlm::VlmBackend& model, const std::vector<TrainSample>& samples,
                                      const std::string& identifier, const TrainingConfig& cfg,
                                      const StepCallback& on_step = {}) {
  cfg.validate();
  if (samples.empty()) throw InputError("optimize_embedding needs at least one sample");
  const auto ident_token = model.token_id(identifier);
  if (!ident_token) throw InputError("identifier '" + identifier + "' is not registered with the tokenizer");
  for (const auto& s : samples) {
    if (cfg.mode == TaskMode::vqa && s.qa_pairs.empty())
      throw InputError("vqa training needs question/answer pairs for " + s.image_id);
    if (store::count_placeholders(s.target_text) != 1)
      throw ValidationError("target must contain the placeholder exactly once", s.image_id);
  }

  Rng rng(cfg.seed);
  const std::vector<int> caption_instr = model.encode_text(cfg.instruction);
  TrainResult result;
  result.embedding.mode = model.mode();
  result.embedding.identifier_token = *ident_token;
  Matrix e = initial_embedding(model, samples.front(), cfg, rng);
  optim::AdamW opt({cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay});

  for (int step = 0; step < cfg.steps; ++step) {
    const auto idx = static_cast<std::size_t>(step) % samples.size();
    const TrainSample& s = samples[idx];
    const Image img = cfg.augment.any_image() ? augment_image(s.image, rng, cfg.augment, cfg.ranges) : s.image;
    const vlm::VisionFeatures f = model.encode_image(img);
    StepRecord rec;
    rec.step = step;
    rec.image_index = static_cast<int>(idx);
    std::vector<int> instr;
    std::vector<int> target;
    if (cfg.mode == TaskMode::caption) {
      std::string text = s.target_text;
      if (cfg.augment.caption_variants && !s.variants.empty()) {
        rec.chosen_variant = static_cast<int>(sample_index(s.variants.size(), rng, "caption list"));
        text = s.variants[static_cast<std::size_t>(rec.chosen_variant)];
      }
      instr = caption_instr;
      target = model.encode_text(store::fill_placeholder(text, identifier));
    } else {
      rec.chosen_qa = static_cast<int>(sample_index(s.qa_pairs.size(), rng, "question list"));
      const auto& qa = s.qa_pairs[static_cast<std::size_t>(rec.chosen_qa)];
      instr = model.encode_text(store::fill_placeholder(qa.first, identifier));
      target = model.encode_text(store::fill_placeholder(qa.second, identifier));
    }
    target.push_back(vlm::kEos);

    vlm::LossResult lr;
    for (;;) {
      try {
        lr = model.forward_loss(f, instr, target, {{e.col(0), *ident_token}}, {cfg.lambda_reg, cfg.penalty_form});
        break;
      } catch (const DegenerateInputError&) {
        if (result.history.reinitializations > 0) throw;
        ++result.history.reinitializations;
        e = initial_embedding(model, samples.front(), cfg, rng);
        if (e.norm() == 0) e = rng.normal_matrix(e.rows(), 1, 1.0);
      }
    }
    rec.loss = lr.loss;
    rec.ce = lr.ce;
    rec.reg = lr.reg;
    rec.grad_norm = lr.gradients.front().norm();
    if (!std::isfinite(lr.loss) || !lr.gradients.front().allFinite()) {
      result.history.steps.push_back(rec);
      throw TrainingAborted("non-finite loss at step " + std::to_string(step), result.history);
    }
    const Vector g = clip_gradient(lr.gradients.front(), cfg.clip_max_norm);
    opt.step(e, g, cfg.learning_rate);
    result.history.steps.push_back(rec);
    if (on_step) on_step(rec, cfg.steps);
  }
  result.embedding.vector = e.col(0);
  result.embedding.version = 1;
  result.history.final_version = 1;
  return result;
}

}  // namespace myconcept::trainer
