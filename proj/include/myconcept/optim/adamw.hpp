// Copyright 2026 The MyConcept Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <vector>

#include "myconcept/core/linalg.hpp"

namespace myconcept::optim {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// AdamW with decoupled weight decay, one moment pair per parameter tensor.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  const AdamWConfig& config() const { return cfg_; }
  int steps() const { return t_; }

  /// One update of `params` with `grads` at learning rate `lr`.
  void step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads, double lr) {
    if (params.size() != grads.size()) throw DimensionError("AdamW: parameter/gradient count mismatch");
    if (m_.empty()) {
      for (const Matrix* p : params) {
        m_.push_back(Matrix::Zero(p->rows(), p->cols()));
        v_.push_back(Matrix::Zero(p->rows(), p->cols()));
      }
    }
    if (m_.size() != params.size()) throw DimensionError("AdamW: parameter set changed between steps");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Matrix& p = *params[i];
      const Matrix& g = grads[i];
      require_same_dim(p.size(), g.size(), "AdamW gradient");
      p *= 1.0 - lr * cfg_.weight_decay;
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
      const auto denom = (v_[i].array() / bc2).sqrt() + cfg_.eps;
      p.array() -= lr * (m_[i].array() / bc1) / denom;
    }
  }

  void step(Matrix& param, const Matrix& grad, double lr) { step(std::vector<Matrix*>{&param}, {grad}, lr); }

 private:
  AdamWConfig cfg_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  int t_ = 0;
};

/// Cosine annealing from `base` to 0 over `total` steps.
inline double cosine_lr(double base, int step, int total) {
  if (total <= 0) return base;
  return base * 0.5 * (1.0 + std::cos(3.14159265358979323846 * static_cast<double>(step) / total));
}

}  // namespace myconcept::optim
