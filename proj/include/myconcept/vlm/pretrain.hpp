// Copyright 2026 The MyConcept Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "myconcept/optim/adamw.hpp"
#include "myconcept/store/synthetic.hpp"
#include "myconcept/vlm/model.hpp"

namespace myconcept::vlm {

inline constexpr int kNameSlots = 64;

/// Special tokens, the synthetic world's words and a block of name slots. The first
/// slots carry common identifiers; the rest are free for registration.
inline ModelConfig default_model_config(FusionMode mode) {
  ModelConfig cfg;
  cfg.fusion.mode = mode;
  cfg.vocab = {"<pad>", "<unk>", "<bos>", "<eos>"};
  for (const auto& w : store::world_words()) cfg.vocab.push_back(w);
  const std::vector<std::string> named = {"sks", "bob", "anna"};
  for (int i = 0; i < kNameSlots; ++i) {
    cfg.name_slots.push_back(static_cast<int>(cfg.vocab.size()));
    cfg.vocab.push_back(i < static_cast<int>(named.size()) ? named[static_cast<std::size_t>(i)]
                                                           : "<id" + std::to_string(i) + ">");
  }
  return cfg;
}

inline const char* kCaptionInstruction = "please caption this image";

struct PretrainConfig {
  int steps = 2000;
  int batch = 16;
  double lr = 3e-3;
  double weight_decay = 0.01;
  int n_scenes = 4000;
  std::uint64_t seed = 1;
  /// Sample mix: generic caption, named caption, named QA, generic QA.
  double p_caption = 0.4;
  double p_named_caption = 0.2;
  double p_named_qa = 0.1;
  std::function<void(int step, double loss)> on_progress;
};

/// Teaches a freshly initialised model to caption and answer questions about the
/// synthetic world. Named samples feed a name's own token embedding through the
/// concept-injection path, so the frozen model later knows how to turn an injected
/// vector into a name.
inline void pretrain(ToyVlm& model, const PretrainConfig& pc) {
  Rng rng(pc.seed);
  struct Item {
    VisionFeatures features;
    store::SceneMeta meta;
  };
  std::vector<Item> data;
  data.reserve(static_cast<std::size_t>(pc.n_scenes));
  for (int i = 0; i < pc.n_scenes; ++i) {
    store::Scene s = store::random_scene(rng);
    data.push_back({model.encode_image(s.image), s.meta});
  }
  const Tokenizer& tok = model.tokenizer();
  const std::vector<int> caption_instr = tok.encode(kCaptionInstruction);
  const auto& slots = model.config().name_slots;
  optim::AdamW opt({pc.lr, 0.9, 0.999, 1e-8, pc.weight_decay});
  Params& params = model.mutable_params();
  std::vector<Matrix*> ptrs;
  params.visit([&](const std::string&, Matrix& m) { ptrs.push_back(&m); });

  for (int step = 0; step < pc.steps; ++step) {
    ad::Tape tape;
    ParamVars pv = params_on_tape(tape, params, true);
    ad::Var total;
    for (int b = 0; b < pc.batch; ++b) {
      const Item& item = data[rng.index(data.size())];
      const double u = rng.uniform();
      std::vector<int> instr;
      std::vector<int> target;
      std::vector<ad::Var> injected;
      if (u < pc.p_caption) {
        instr = caption_instr;
        target = tok.encode(store::generic_caption(item.meta));
      } else if (u < pc.p_caption + pc.p_named_caption + pc.p_named_qa) {
        const int slot = slots[rng.index(slots.size())];
        const std::string name = tok.word(slot);
        if (u < pc.p_caption + pc.p_named_caption) {
          const auto caps = store::personal_captions(item.meta.background, name);
          instr = caption_instr;
          target = tok.encode(caps[rng.index(caps.size())]);
        } else {
          const auto qa = store::personal_qa(item.meta, name);
          const auto& pair = qa[rng.index(qa.size())];
          instr = tok.encode(pair.first);
          target = tok.encode(pair.second);
        }
        const std::vector<int> id{slot};
        ad::Var label = ad::gather_rows(pv.embed, id);
        injected.push_back(model.mode() == FusionMode::qformer ? ad::matmul_nt(label, pv.label_proj) : label);
      } else {
        const auto qa = store::generic_qa(item.meta);
        const auto& pair = qa[rng.index(qa.size())];
        instr = tok.encode(pair.first);
        target = tok.encode(pair.second);
      }
      target.push_back(kEos);
      std::vector<int> seq = instr;
      seq.insert(seq.end(), target.begin(), target.end() - 1);
      ForwardGraph g = model.forward(tape, pv, item.features, injected, seq, {});
      const int start = g.prefix_length + static_cast<int>(instr.size()) - 1;
      ad::Var ce = ad::cross_entropy(ad::slice_rows(g.logits, start, static_cast<Eigen::Index>(target.size())), target);
      total = total.valid() ? ad::add(total, ce) : ce;
    }
    total = ad::scale(total, 1.0 / pc.batch);
    tape.backward(total);
    std::vector<Matrix> grads;
    pv.visit([&](const std::string&, ad::Var& v) { grads.push_back(tape.grad(v)); });
    opt.step(ptrs, grads, optim::cosine_lr(pc.lr, step, pc.steps));
    if (pc.on_progress) pc.on_progress(step, total.scalar());
  }
}

}  // namespace myconcept::vlm
