// Copyright 2026 The MyConcept Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "myconcept/ad/ops.hpp"
#include "myconcept/core/random.hpp"
#include "myconcept/vlm/backend.hpp"
#include "myconcept/vlm/encoder.hpp"
#include "myconcept/vlm/tokenizer.hpp"

namespace myconcept::vlm {

template <class T>
struct BlockParams {
  T ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w1, b1, w2, b2;

  template <class F>
  void visit(const std::string& p, F&& f) {
    f(p + "ln1_g", ln1_g);
    f(p + "ln1_b", ln1_b);
    f(p + "wq", wq);
    f(p + "wk", wk);
    f(p + "wv", wv);
    f(p + "wo", wo);
    f(p + "ln2_g", ln2_g);
    f(p + "ln2_b", ln2_b);
    f(p + "w1", w1);
    f(p + "b1", b1);
    f(p + "w2", w2);
    f(p + "b2", b2);
  }
};

/// Every backbone tensor, generic over storage (Matrix) and tape handles (ad::Var).
template <class T>
struct ModelParams {
  FusionMode mode = FusionMode::qformer;
  T queries, out_proj, label_proj;
  std::vector<BlockParams<T>> fusion;
  T proj, proj_b;
  T embed, pos;
  std::vector<BlockParams<T>> decoder;
  T lnf_g, lnf_b;

  /// Declaration order; this is also the checkpoint order.
  template <class F>
  void visit(F&& f) {
    if (mode == FusionMode::qformer) {
      f("queries", queries);
      for (std::size_t i = 0; i < fusion.size(); ++i) fusion[i].visit("fusion" + std::to_string(i) + ".", f);
      f("out_proj", out_proj);
      f("label_proj", label_proj);
    } else {
      f("proj", proj);
      f("proj_b", proj_b);
    }
    f("embed", embed);
    f("pos", pos);
    for (std::size_t i = 0; i < decoder.size(); ++i) decoder[i].visit("decoder" + std::to_string(i) + ".", f);
    f("lnf_g", lnf_g);
    f("lnf_b", lnf_b);
  }

  template <class F>
  void visit(F&& f) const {
    const_cast<ModelParams*>(this)->visit([&](const std::string& name, T& v) { f(name, static_cast<const T&>(v)); });
  }
};

using Params = ModelParams<Matrix>;
using ParamVars = ModelParams<ad::Var>;

namespace detail {

inline BlockParams<Matrix> init_block(Rng& rng, int d, int d_kv, int hidden) {
  auto w = [&](int r, int c) { return rng.normal_matrix(r, c, 1.0 / std::sqrt(static_cast<double>(c))); };
  BlockParams<Matrix> b;
  b.ln1_g = Matrix::Ones(1, d);
  b.ln1_b = Matrix::Zero(1, d);
  b.wq = w(d, d);
  b.wk = w(d, d_kv);
  b.wv = w(d, d_kv);
  b.wo = w(d, d);
  b.ln2_g = Matrix::Ones(1, d);
  b.ln2_b = Matrix::Zero(1, d);
  b.w1 = w(hidden, d);
  b.b1 = Matrix::Zero(1, hidden);
  b.w2 = w(d, hidden);
  b.b2 = Matrix::Zero(1, d);
  return b;
}

}  // namespace detail

inline Params init_params(const ModelConfig& cfg) {
  cfg.fusion.validate();
  Rng rng(cfg.seed);
  const int d = cfg.fusion.d;
  const int hidden = cfg.mlp_ratio * d;
  const auto vocab = static_cast<int>(cfg.vocab.size());
  Params p;
  p.mode = cfg.fusion.mode;
  if (p.mode == FusionMode::qformer) {
    p.queries = rng.normal_matrix(cfg.fusion.n_query_tokens, d, 0.5);
    for (int i = 0; i < cfg.fusion.n_layers; ++i) p.fusion.push_back(detail::init_block(rng, d, cfg.d_v(), hidden));
    p.out_proj = rng.normal_matrix(d, d, 1.0 / std::sqrt(static_cast<double>(d)));
    p.label_proj = rng.normal_matrix(cfg.d_v(), d, 1.0 / std::sqrt(static_cast<double>(d)));
  } else {
    p.proj = rng.normal_matrix(d, cfg.d_v(), 1.0 / std::sqrt(static_cast<double>(cfg.d_v())));
    p.proj_b = Matrix::Zero(1, d);
  }
  p.embed = rng.normal_matrix(vocab, d, 0.5);
  p.pos = rng.normal_matrix(cfg.max_positions, d, 0.1);
  for (int i = 0; i < cfg.decoder_layers; ++i) p.decoder.push_back(detail::init_block(rng, d, d, hidden));
  p.lnf_g = Matrix::Ones(1, d);
  p.lnf_b = Matrix::Zero(1, d);
  return p;
}

/// Places every parameter on `tape`, trainable or frozen.
inline ParamVars params_on_tape(ad::Tape& tape, const Params& params, bool trainable) {
  std::vector<const Matrix*> values;
  params.visit([&](const std::string&, const Matrix& m) { values.push_back(&m); });
  ParamVars vars;
  vars.mode = params.mode;
  vars.fusion.resize(params.fusion.size());
  vars.decoder.resize(params.decoder.size());
  std::size_t i = 0;
  vars.visit([&](const std::string&, ad::Var& v) {
    v = trainable ? tape.variable(*values[i]) : tape.constant(*values[i]);
    ++i;
  });
  return vars;
}

/// Everything one forward pass produces.
struct ForwardGraph {
  ad::Var logits;  // L × vocab
  int prefix_length = 0;
  std::vector<int> concept_positions;
  ad::Var penalty;  // valid when requested and a concept is injected
  std::vector<AttentionRecord> records;
};

struct ForwardOptions {
  bool want_penalty = false;
  PenaltyForm penalty_form = PenaltyForm::per_query;
  bool keep_attention = false;
};

/// Frozen toy vision-language model.
class ToyVlm final : public VlmBackend {
 public:
  ToyVlm(ModelConfig cfg, Params params)
      : cfg_(std::move(cfg)), encoder_(cfg_.encoder), tokenizer_(cfg_.vocab, cfg_.name_slots),
        params_(std::move(params)) {
    cfg_.fusion.validate();
    if (params_.mode != cfg_.fusion.mode) throw InputError("parameters do not match the fusion mode");
    if (params_.embed.rows() != static_cast<Eigen::Index>(cfg_.vocab.size()))
      throw DimensionError("embedding table does not match the vocabulary");
  }

  static ToyVlm random(ModelConfig cfg) {
    Params p = init_params(cfg);
    return ToyVlm(std::move(cfg), std::move(p));
  }

  const ModelConfig& config() const { return cfg_; }
  FusionMode mode() const override { return cfg_.fusion.mode; }
  const ToyEncoder& encoder() const { return encoder_; }
  Tokenizer& tokenizer() { return tokenizer_; }
  const Tokenizer& tokenizer() const { return tokenizer_; }
  const Params& params() const { return params_; }
  int concept_dim() const override { return cfg_.concept_dim(); }

  VisionFeatures encode_image(const Image& img) const override { return encoder_.encode(img); }

  std::vector<int> encode_text(const std::string& text) const override { return tokenizer_.encode(text); }
  std::string decode_tokens(const std::vector<int>& ids) const override { return tokenizer_.decode(ids); }
  std::optional<int> token_id(const std::string& word) const override { return tokenizer_.find(word); }

  /// CRC32 over the raw bytes of every backbone parameter.
  std::uint32_t parameter_checksum() const override {
    uLong crc = crc32(0L, Z_NULL, 0);
    params_.visit([&](const std::string&, const Matrix& m) {
      crc = crc32(crc, reinterpret_cast<const Bytef*>(m.data()), static_cast<uInt>(m.size() * sizeof(double)));
    });
    return static_cast<std::uint32_t>(crc);
  }

  /// Default starting point for a concept vector: the mean image token of `f`,
  /// taken in the space the concept is injected into.
  Vector mean_image_token(const VisionFeatures& f) const override {
    check_features(f);
    if (mode() == FusionMode::qformer) return f.patch_tokens.colwise().mean().transpose();
    Matrix projected = f.patch_tokens * params_.proj.transpose();
    projected.rowwise() += params_.proj_b.row(0);
    return projected.colwise().mean().transpose();
  }

  void check_features(const VisionFeatures& f) const {
    if (f.patch_tokens.rows() < 1) throw DimensionError("features have no patch tokens");
    require_same_dim(cfg_.d_v(), f.patch_tokens.cols(), "patch token width");
    require_same_dim(cfg_.d_v(), f.summary_token.size(), "summary token width");
    if (!f.patch_tokens.allFinite() || !f.summary_token.allFinite()) throw InputError("features are not finite");
  }

  void check_injected(const std::vector<InjectedConcept>& injected) const {
    for (const auto& c : injected) {
      require_same_dim(concept_dim(), c.embedding.size(), "injected concept width");
      if (!c.embedding.allFinite()) throw InputError("injected concept is not finite");
    }
  }

  /// Builds the full graph. `tokens` are the language tokens after the prefix
  /// (instruction followed by any teacher-forced target tokens).
  ForwardGraph forward(ad::Tape& tape, ParamVars& pv, const VisionFeatures& f, const std::vector<ad::Var>& injected,
                       const std::vector<int>& tokens, const ForwardOptions& opt) const {
    using namespace ad;
    check_features(f);
    const FusionConfig& fc = cfg_.fusion;
    const int nh = fc.n_heads;
    const int dh = fc.d_head();
    const double s = fc.scale();
    const auto n_img = static_cast<int>(f.patch_tokens.rows());
    const auto n_conc = static_cast<int>(injected.size());
    for (const Var& c : injected) {
      if (c.rows() != 1) throw DimensionError("each injected concept must be a single row");
      require_same_dim(concept_dim(), c.cols(), "injected concept width");
    }
    ForwardGraph g;
    Var tokens_img = tape.constant(f.patch_tokens);
    Var penalty_sum;
    double penalty_norm = 1.0;
    auto add_penalty = [&](Var term) { penalty_sum = penalty_sum.valid() ? add(penalty_sum, term) : term; };

    std::vector<Var> seq_parts;
    if (fc.mode == FusionMode::qformer) {
      Var x = pv.queries;
      const auto m_q = static_cast<int>(x.rows());
      for (std::size_t li = 0; li < pv.fusion.size(); ++li) {
        auto& b = pv.fusion[li];
        Var h = layer_norm(x, b.ln1_g, b.ln1_b);
        Var q = matmul_nt(h, b.wq);
        Var k = matmul_nt(tokens_img, b.wk);
        Var v = matmul_nt(tokens_img, b.wv);
        std::vector<Var> kc, vc;
        for (const Var& c : injected) {
          kc.push_back(matmul_nt(c, b.wk));
          vc.push_back(matmul_nt(c, b.wv));
        }
        AttentionRecord rec;
        rec.stage = AttentionStage::fusion;
        rec.layer = static_cast<int>(li);
        rec.key_labels.assign(static_cast<std::size_t>(n_img), KeyLabel::image);
        rec.key_labels.insert(rec.key_labels.end(), static_cast<std::size_t>(n_conc), KeyLabel::concept_token);
        std::vector<Var> heads;
        for (int hd = 0; hd < nh; ++hd) {
          Var qh = slice_cols(q, hd * dh, dh);
          Var kh = slice_cols(k, hd * dh, dh);
          Var vh = slice_cols(v, hd * dh, dh);
          std::vector<Var> keys{kh}, vals{vh};
          std::vector<Var> conc_keys;
          if (n_conc > 0) {
            Var nk = mean_row_norm(kh);
            Var nv = mean_row_norm(vh);
            for (int c = 0; c < n_conc; ++c) {
              Var khat = rescale_rows_to_norm(slice_cols(kc[c], hd * dh, dh), nk);
              keys.push_back(khat);
              conc_keys.push_back(khat);
              vals.push_back(rescale_rows_to_norm(slice_cols(vc[c], hd * dh, dh), nv));
            }
          }
          Var kk = concat_rows(keys);
          Var vv = concat_rows(vals);
          Var p = softmax_rows(scale(matmul_nt(qh, kk), s));
          heads.push_back(matmul(p, vv));
          if (opt.keep_attention) rec.probs.push_back(p.value());
          if (opt.want_penalty && n_conc > 0) {
            for (int c = 0; c < n_conc; ++c) {
              if (opt.penalty_form == PenaltyForm::per_query) {
                add_penalty(sum(square(slice_cols(p, n_img + c, 1))));
              } else {
                add_penalty(sum(square(softmax_rows(matmul_nt(conc_keys[c], qh)))));
              }
            }
          }
        }
        x = add(x, matmul_nt(concat_cols(heads), b.wo));
        Var h2 = layer_norm(x, b.ln2_g, b.ln2_b);
        x = add(x, add_row(matmul_nt(gelu(add_row(matmul_nt(h2, b.w1), b.b1)), b.w2), b.b2));
        if (opt.keep_attention) g.records.push_back(std::move(rec));
      }
      penalty_norm = 1.0 / (static_cast<double>(nh) * static_cast<double>(pv.fusion.size()));
      seq_parts.push_back(matmul_nt(x, pv.out_proj));
      g.prefix_length = m_q;
    } else {
      seq_parts.push_back(add_row(matmul_nt(tokens_img, pv.proj), pv.proj_b));
      if (n_conc > 0) {
        const double summary_norm = f.summary_token.norm();
        if (!(summary_norm > 0)) throw DegenerateInputError("summary token has zero norm");
        Matrix target(1, 1);
        target(0, 0) = summary_norm;
        Var tn = tape.constant(target);
        for (int c = 0; c < n_conc; ++c) {
          seq_parts.push_back(rescale_rows_to_norm(injected[static_cast<std::size_t>(c)], tn));
          g.concept_positions.push_back(n_img + c);
        }
      }
      g.prefix_length = n_img + n_conc;
    }

    const int n_lang = static_cast<int>(tokens.size());
    if (n_lang > 0) seq_parts.push_back(gather_rows(pv.embed, tokens));
    Var x = concat_rows(seq_parts);
    const auto len = static_cast<int>(x.rows());
    if (len > cfg_.max_positions)
      throw InputError("sequence of " + std::to_string(len) + " exceeds " + std::to_string(cfg_.max_positions) +
                       " positions");
    x = add(x, slice_rows(pv.pos, 0, len));

    BoolMatrix causal(len, len);
    for (int i = 0; i < len; ++i)
      for (int j = 0; j < len; ++j) causal(i, j) = j > i;

    std::vector<KeyLabel> labels;
    if (fc.mode == FusionMode::qformer) {
      labels.assign(static_cast<std::size_t>(g.prefix_length), KeyLabel::query);
    } else {
      labels.assign(static_cast<std::size_t>(n_img), KeyLabel::image);
      labels.insert(labels.end(), static_cast<std::size_t>(n_conc), KeyLabel::concept_token);
    }
    labels.insert(labels.end(), static_cast<std::size_t>(n_lang), KeyLabel::language);

    // Query rows other than the concept positions, for the prefix penalty.
    std::vector<int> other_rows;
    for (int i = 0; i < len; ++i)
      if (std::find(g.concept_positions.begin(), g.concept_positions.end(), i) == g.concept_positions.end())
        other_rows.push_back(i);
    const bool prefix_penalty = opt.want_penalty && fc.mode == FusionMode::prefix && n_conc > 0;

    for (std::size_t li = 0; li < pv.decoder.size(); ++li) {
      auto& b = pv.decoder[li];
      Var h = layer_norm(x, b.ln1_g, b.ln1_b);
      Var q = matmul_nt(h, b.wq);
      Var k = matmul_nt(h, b.wk);
      Var v = matmul_nt(h, b.wv);
      AttentionRecord rec;
      rec.stage = AttentionStage::decoder;
      rec.layer = static_cast<int>(li);
      rec.key_labels = labels;
      std::vector<Var> heads;
      for (int hd = 0; hd < nh; ++hd) {
        Var p = softmax_rows(scale(matmul_nt(slice_cols(q, hd * dh, dh), slice_cols(k, hd * dh, dh)), s), &causal);
        heads.push_back(matmul(p, slice_cols(v, hd * dh, dh)));
        if (opt.keep_attention) rec.probs.push_back(p.value());
        if (prefix_penalty && !other_rows.empty()) {
          for (int cp : g.concept_positions) add_penalty(sum(square(gather_rows(slice_cols(p, cp, 1), other_rows))));
        }
      }
      x = add(x, matmul_nt(concat_cols(heads), b.wo));
      Var h2 = layer_norm(x, b.ln2_g, b.ln2_b);
      x = add(x, add_row(matmul_nt(gelu(add_row(matmul_nt(h2, b.w1), b.b1)), b.w2), b.b2));
      if (opt.keep_attention) g.records.push_back(std::move(rec));
    }
    if (prefix_penalty) {
      penalty_norm = other_rows.empty()
                         ? 0.0
                         : 1.0 / (static_cast<double>(other_rows.size()) * nh * static_cast<double>(pv.decoder.size()));
    }
    x = layer_norm(x, pv.lnf_g, pv.lnf_b);
    g.logits = matmul_nt(x, pv.embed);
    if (opt.want_penalty) {
      if (penalty_sum.valid()) {
        g.penalty = scale(penalty_sum, penalty_norm);
      } else {
        g.penalty = tape.constant(Matrix::Zero(1, 1));
      }
    }
    return g;
  }

  /// Teacher-forced loss CE + lambda·penalty and its gradient with respect to each
  /// injected vector. The backbone is held constant.
  LossResult forward_loss(const VisionFeatures& f, const std::vector<int>& instruction, const std::vector<int>& target,
                          const std::vector<InjectedConcept>& injected, const LossOptions& opt = {}) const override {
    if (target.empty()) throw InputError("target must not be empty");
    if (opt.lambda < 0) throw InputError("lambda must be non-negative");
    check_injected(injected);
    ad::Tape tape;
    ParamVars pv = params_on_tape(tape, params_, false);
    std::vector<ad::Var> conc;
    for (const auto& c : injected) conc.push_back(tape.variable(c.embedding.transpose()));
    std::vector<int> seq = instruction;
    seq.insert(seq.end(), target.begin(), target.end() - 1);
    ForwardOptions fo;
    fo.want_penalty = true;
    fo.penalty_form = opt.penalty_form;
    ForwardGraph g = forward(tape, pv, f, conc, seq, fo);
    const int start = g.prefix_length + static_cast<int>(instruction.size()) - 1;
    if (start < 0) throw InputError("nothing precedes the first target token");
    ad::Var ce = ad::cross_entropy(ad::slice_rows(g.logits, start, static_cast<Eigen::Index>(target.size())), target);
    ad::Var total = opt.lambda > 0 ? ad::add(ce, ad::scale(g.penalty, opt.lambda)) : ce;
    LossResult r;
    r.ce = ce.scalar();
    r.reg = g.penalty.scalar();
    r.loss = total.scalar();
    tape.backward(total);
    for (const auto& v : conc) r.gradients.push_back(tape.grad(v).transpose());
    return r;
  }

  GenerationTrace generate(const VisionFeatures& f, const std::string& instruction,
                           const std::vector<InjectedConcept>& injected, const DecodeConfig& dc = {}) const override {
    return generate_ids(f, tokenizer_.encode(instruction), injected, dc);
  }

  GenerationTrace generate_ids(const VisionFeatures& f, const std::vector<int>& instruction,
                               const std::vector<InjectedConcept>& injected, const DecodeConfig& dc = {}) const {
    check_features(f);
    check_injected(injected);
    if (dc.max_new_tokens < 0) throw InputError("max_new_tokens must be non-negative");
    std::mt19937_64 rng(dc.seed);
    GenerationTrace trace;
    std::vector<Vector> logit_rows;
    std::vector<int> seq = instruction;
    for (int step = 0; step <= dc.max_new_tokens; ++step) {
      ad::Tape tape;
      ParamVars pv = params_on_tape(tape, params_, false);
      std::vector<ad::Var> conc;
      for (const auto& c : injected) conc.push_back(tape.constant(c.embedding.transpose()));
      ForwardOptions fo;
      const bool last = step == dc.max_new_tokens;
      fo.keep_attention = dc.keep_attention;
      ForwardGraph g = forward(tape, pv, f, conc, seq, fo);
      trace.prefix_length = g.prefix_length;
      trace.concept_positions = g.concept_positions;
      trace.attention_records = std::move(g.records);
      if (last) break;
      if (g.prefix_length + static_cast<int>(seq.size()) >= cfg_.max_positions) break;
      const Vector row = g.logits.value().bottomRows(1).transpose();
      if (dc.keep_logits) logit_rows.push_back(row);
      const int next = dc.strategy == DecodeConfig::Strategy::greedy ? argmax(row) : sample(row, dc, rng);
      if (next == kEos) break;
      seq.push_back(next);
      trace.tokens.push_back(next);
    }
    trace.text = tokenizer_.decode(trace.tokens);
    if (dc.keep_logits) {
      Matrix hist(static_cast<Eigen::Index>(logit_rows.size()), static_cast<Eigen::Index>(tokenizer_.size()));
      for (std::size_t i = 0; i < logit_rows.size(); ++i) hist.row(static_cast<Eigen::Index>(i)) = logit_rows[i];
      trace.logits_history = std::move(hist);
    }
    return trace;
  }

  Params& mutable_params() { return params_; }

 private:
  static int argmax(const Vector& row) {
    Eigen::Index best = 0;
    row.maxCoeff(&best);
    return static_cast<int>(best);
  }

  /// Temperature plus nucleus sampling.
  static int sample(const Vector& row, const DecodeConfig& dc, std::mt19937_64& rng) {
    if (!(dc.temperature > 0) || !(dc.top_p > 0) || dc.top_p > 1) throw InputError("invalid sampling parameters");
    Vector p = ((row.array() - row.maxCoeff()) / dc.temperature).exp().matrix();
    p /= p.sum();
    std::vector<int> order(static_cast<std::size_t>(p.size()));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return p(a) > p(b); });
    std::vector<double> kept;
    double mass = 0;
    for (int id : order) {
      kept.push_back(p(id));
      mass += p(id);
      if (mass >= dc.top_p) break;
    }
    std::discrete_distribution<int> pick(kept.begin(), kept.end());
    return order[static_cast<std::size_t>(pick(rng))];
  }

  ModelConfig cfg_;
  ToyEncoder encoder_;
  Tokenizer tokenizer_;
  Params params_;
};

}  // namespace myconcept::vlm
