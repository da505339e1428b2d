// Copyright 2026 The MyConcept Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "myconcept/ad/tape.hpp"

namespace myconcept::ad {

using BoolMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

namespace detail {
inline bool any_grad(std::initializer_list<Var> vars) {
  for (const Var& v : vars)
    if (v.requires_grad()) return true;
  return false;
}
inline Tape& tape_of(Var v) { return *v.tape(); }
}  // namespace detail

inline Var matmul(Var a, Var b) {
  require_same_dim(a.cols(), b.rows(), "matmul");
  return detail::tape_of(a).record(a.value() * b.value(), detail::any_grad({a, b}),
                                   [a, b](Tape& t, const Matrix& g) {
                                     if (a.requires_grad()) t.accumulate(a, g * b.value().transpose());
                                     if (b.requires_grad()) t.accumulate(b, a.value().transpose() * g);
                                   });
}

/// a · bᵀ
inline Var matmul_nt(Var a, Var b) {
  require_same_dim(a.cols(), b.cols(), "matmul_nt");
  return detail::tape_of(a).record(a.value() * b.value().transpose(), detail::any_grad({a, b}),
                                   [a, b](Tape& t, const Matrix& g) {
                                     if (a.requires_grad()) t.accumulate(a, g * b.value());
                                     if (b.requires_grad()) t.accumulate(b, g.transpose() * a.value());
                                   });
}

inline Var add(Var a, Var b) {
  require_same_dim(a.rows(), b.rows(), "add rows");
  require_same_dim(a.cols(), b.cols(), "add cols");
  return detail::tape_of(a).record(a.value() + b.value(), detail::any_grad({a, b}),
                                   [a, b](Tape& t, const Matrix& g) {
                                     t.accumulate(a, g);
                                     t.accumulate(b, g);
                                   });
}

inline Var sub(Var a, Var b) {
  require_same_dim(a.rows(), b.rows(), "sub rows");
  require_same_dim(a.cols(), b.cols(), "sub cols");
  return detail::tape_of(a).record(a.value() - b.value(), detail::any_grad({a, b}),
                                   [a, b](Tape& t, const Matrix& g) {
                                     t.accumulate(a, g);
                                     t.accumulate(b, -g);
                                   });
}

inline Var hadamard(Var a, Var b) {
  require_same_dim(a.rows(), b.rows(), "hadamard rows");
  require_same_dim(a.cols(), b.cols(), "hadamard cols");
  return detail::tape_of(a).record(a.value().cwiseProduct(b.value()), detail::any_grad({a, b}),
                                   [a, b](Tape& t, const Matrix& g) {
                                     if (a.requires_grad()) t.accumulate(a, g.cwiseProduct(b.value()));
                                     if (b.requires_grad()) t.accumulate(b, g.cwiseProduct(a.value()));
                                   });
}

inline Var square(Var a) { return hadamard(a, a); }

inline Var scale(Var a, double s) {
  return detail::tape_of(a).record(a.value() * s, a.requires_grad(),
                                   [a, s](Tape& t, const Matrix& g) { t.accumulate(a, g * s); });
}

/// Adds a 1×n row to every row of `a`.
inline Var add_row(Var a, Var row) {
  require_same_dim(a.cols(), row.cols(), "add_row");
  if (row.rows() != 1) throw DimensionError("add_row expects a single row");
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return detail::tape_of(a).record(std::move(out), detail::any_grad({a, row}),
                                   [a, row](Tape& t, const Matrix& g) {
                                     t.accumulate(a, g);
                                     if (row.requires_grad()) t.accumulate(row, g.colwise().sum());
                                   });
}

inline Var sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  const auto r = a.rows();
  const auto c = a.cols();
  return detail::tape_of(a).record(std::move(out), a.requires_grad(), [a, r, c](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix::Constant(r, c, g(0, 0)));
  });
}

inline Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

inline Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows of nothing");
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts[0].cols();
  bool grad = false;
  for (const Var& p : parts) {
    require_same_dim(cols, p.cols(), "concat_rows");
    rows += p.rows();
    grad = grad || p.requires_grad();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return detail::tape_of(parts[0]).record(std::move(out), grad, [saved](Tape& t, const Matrix& g) {
    Eigen::Index off = 0;
    for (const Var& p : saved) {
      if (p.requires_grad()) t.accumulate(p, g.middleRows(off, p.rows()));
      off += p.rows();
    }
  });
}

inline Var concat_rows(std::initializer_list<Var> parts) {
  return concat_rows(std::span<const Var>(parts.begin(), parts.size()));
}

inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols of nothing");
  Eigen::Index cols = 0;
  const Eigen::Index rows = parts[0].rows();
  bool grad = false;
  for (const Var& p : parts) {
    require_same_dim(rows, p.rows(), "concat_cols");
    cols += p.cols();
    grad = grad || p.requires_grad();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return detail::tape_of(parts[0]).record(std::move(out), grad, [saved](Tape& t, const Matrix& g) {
    Eigen::Index off = 0;
    for (const Var& p : saved) {
      if (p.requires_grad()) t.accumulate(p, g.middleCols(off, p.cols()));
      off += p.cols();
    }
  });
}

inline Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw DimensionError("slice_rows out of range");
  const auto r = a.rows();
  const auto c = a.cols();
  return detail::tape_of(a).record(a.value().middleRows(start, count), a.requires_grad(),
                                   [a, start, count, r, c](Tape& t, const Matrix& g) {
                                     Matrix full = Matrix::Zero(r, c);
                                     full.middleRows(start, count) = g;
                                     t.accumulate(a, full);
                                   });
}

inline Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw DimensionError("slice_cols out of range");
  const auto r = a.rows();
  const auto c = a.cols();
  return detail::tape_of(a).record(a.value().middleCols(start, count), a.requires_grad(),
                                   [a, start, count, r, c](Tape& t, const Matrix& g) {
                                     Matrix full = Matrix::Zero(r, c);
                                     full.middleCols(start, count) = g;
                                     t.accumulate(a, full);
                                   });
}

/// Row lookup (embedding tables).
inline Var gather_rows(Var table, std::span<const int> ids) {
  Matrix out(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows()) throw InputError("gather_rows: id out of range");
    out.row(static_cast<Eigen::Index>(i)) = table.value().row(ids[i]);
  }
  std::vector<int> saved(ids.begin(), ids.end());
  const auto r = table.rows();
  const auto c = table.cols();
  return detail::tape_of(table).record(std::move(out), table.requires_grad(),
                                       [table, saved, r, c](Tape& t, const Matrix& g) {
                                         Matrix full = Matrix::Zero(r, c);
                                         for (std::size_t i = 0; i < saved.size(); ++i)
                                           full.row(saved[i]) += g.row(static_cast<Eigen::Index>(i));
                                         t.accumulate(table, full);
                                       });
}

/// Row-wise layer normalisation with gain and bias rows (1×n).
inline Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5) {
  const Eigen::Index n = x.cols();
  require_same_dim(n, gain.cols(), "layer_norm gain");
  require_same_dim(n, bias.cols(), "layer_norm bias");
  Matrix xhat(x.rows(), n);
  Vector inv_std(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mu = x.value().row(i).mean();
    const RowVector centered = x.value().row(i).array() - mu;
    const double var = centered.squaredNorm() / static_cast<double>(n);
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = centered * inv_std(i);
  }
  Matrix out = xhat;
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    out.row(i) = out.row(i).cwiseProduct(gain.value().row(0)) + bias.value().row(0);
  return detail::tape_of(x).record(
      std::move(out), detail::any_grad({x, gain, bias}),
      [x, gain, bias, xhat, inv_std, n](Tape& t, const Matrix& g) {
        if (gain.requires_grad()) t.accumulate(gain, g.cwiseProduct(xhat).colwise().sum());
        if (bias.requires_grad()) t.accumulate(bias, g.colwise().sum());
        if (x.requires_grad()) {
          Matrix dx(g.rows(), n);
          for (Eigen::Index i = 0; i < g.rows(); ++i) {
            const RowVector dxhat = g.row(i).cwiseProduct(gain.value().row(0));
            const double m1 = dxhat.mean();
            const double m2 = dxhat.cwiseProduct(xhat.row(i)).mean();
            dx.row(i) = inv_std(i) * (dxhat.array() - m1 - xhat.row(i).array() * m2).matrix();
          }
          t.accumulate(x, dx);
        }
      });
}

/// tanh-approximated GELU.
inline Var gelu(Var x) {
  static constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  static constexpr double k = 0.044715;
  const Matrix& v = x.value();
  Matrix th = (c * (v.array() + k * v.array().cube())).tanh().matrix();
  Matrix out = (0.5 * v.array() * (1.0 + th.array())).matrix();
  return detail::tape_of(x).record(std::move(out), x.requires_grad(), [x, th](Tape& t, const Matrix& g) {
    const auto v = x.value().array();
    const auto d = 0.5 * (1.0 + th.array()) +
                   0.5 * v * (1.0 - th.array().square()) * c * (1.0 + 3.0 * k * v.square());
    t.accumulate(x, (g.array() * d).matrix());
  });
}

/// Row-wise softmax. `mask(i, j) == true` removes key j for row i (probability 0).
/// Rows whose keys are all masked are an error.
inline Matrix softmax_rows_value(const Matrix& logits, const BoolMatrix* mask = nullptr) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < logits.cols(); ++j)
      if (!(mask && (*mask)(i, j))) mx = std::max(mx, logits(i, j));
    if (!std::isfinite(mx)) throw InputError("softmax row has no admissible entries");
    double z = 0.0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      const double e = (mask && (*mask)(i, j)) ? 0.0 : std::exp(logits(i, j) - mx);
      p(i, j) = e;
      z += e;
    }
    p.row(i) /= z;
  }
  return p;
}

inline Var softmax_rows(Var logits, const BoolMatrix* mask = nullptr) {
  if (mask && (mask->rows() != logits.rows() || mask->cols() != logits.cols()))
    throw DimensionError("softmax mask shape");
  Matrix p = softmax_rows_value(logits.value(), mask);
  Matrix saved = p;
  return detail::tape_of(logits).record(std::move(p), logits.requires_grad(),
                                        [logits, saved](Tape& t, const Matrix& g) {
                                          Matrix d = saved.cwiseProduct(g);
                                          const Vector dots = d.rowwise().sum();
                                          d -= saved.cwiseProduct(dots.replicate(1, saved.cols()));
                                          t.accumulate(logits, d);
                                        });
}

/// 1×1 mean of row L2 norms.
inline Var mean_row_norm(Var m) {
  if (m.rows() == 0) throw DimensionError("mean_row_norm of an empty matrix");
  const Vector norms = m.value().rowwise().norm();
  Matrix out(1, 1);
  out(0, 0) = norms.mean();
  const double inv_n = 1.0 / static_cast<double>(m.rows());
  return detail::tape_of(m).record(std::move(out), m.requires_grad(),
                                   [m, norms, inv_n](Tape& t, const Matrix& g) {
                                     Matrix d = m.value();
                                     for (Eigen::Index i = 0; i < d.rows(); ++i)
                                       d.row(i) *= norms(i) > 0 ? g(0, 0) * inv_n / norms(i) : 0.0;
                                     t.accumulate(m, d);
                                   });
}

/// Rescales every row of `x` to the L2 norm held in the 1×1 `target`.
inline Var rescale_rows_to_norm(Var x, Var target) {
  if (target.rows() != 1 || target.cols() != 1) throw DimensionError("rescale target must be 1×1");
  const Vector norms = x.value().rowwise().norm();
  for (Eigen::Index i = 0; i < norms.size(); ++i)
    if (!(norms(i) > 0.0)) throw DegenerateInputError("cannot rescale a zero-norm vector");
  const double n = target.scalar();
  Matrix unit = x.value();
  for (Eigen::Index i = 0; i < unit.rows(); ++i) unit.row(i) /= norms(i);
  Matrix out = unit * n;
  return detail::tape_of(x).record(std::move(out), detail::any_grad({x, target}),
                                   [x, target, unit, norms, n](Tape& t, const Matrix& g) {
                                     if (target.requires_grad()) {
                                       Matrix dn(1, 1);
                                       dn(0, 0) = unit.cwiseProduct(g).sum();
                                       t.accumulate(target, dn);
                                     }
                                     if (x.requires_grad()) {
                                       Matrix dx(g.rows(), g.cols());
                                       for (Eigen::Index i = 0; i < g.rows(); ++i) {
                                         const double along = unit.row(i).dot(g.row(i));
                                         dx.row(i) = (n / norms(i)) * (g.row(i) - along * unit.row(i));
                                       }
                                       t.accumulate(x, dx);
                                     }
                                   });
}

/// Mean token cross entropy of `logits` rows against `targets`. Columns flagged in
/// `excluded` take no probability mass.
inline Var cross_entropy(Var logits, std::span<const int> targets, const std::vector<bool>* excluded = nullptr) {
  require_same_dim(logits.rows(), static_cast<Eigen::Index>(targets.size()), "cross_entropy targets");
  if (targets.empty()) throw InputError("cross entropy needs at least one target");
  BoolMatrix mask;
  if (excluded) {
    mask = BoolMatrix::Constant(logits.rows(), logits.cols(), false);
    for (Eigen::Index j = 0; j < logits.cols(); ++j)
      if ((*excluded)[static_cast<std::size_t>(j)]) mask.col(j).setConstant(true);
  }
  Matrix p = softmax_rows_value(logits.value(), excluded ? &mask : nullptr);
  double loss = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const int y = targets[i];
    if (y < 0 || y >= logits.cols()) throw InputError("cross entropy target out of range");
    loss -= std::log(std::max(p(static_cast<Eigen::Index>(i), y), std::numeric_limits<double>::min()));
  }
  const double inv = 1.0 / static_cast<double>(targets.size());
  Matrix out(1, 1);
  out(0, 0) = loss * inv;
  std::vector<int> saved(targets.begin(), targets.end());
  return detail::tape_of(logits).record(std::move(out), logits.requires_grad(),
                                        [logits, p, saved, inv](Tape& t, const Matrix& g) {
                                          Matrix d = p;
                                          for (std::size_t i = 0; i < saved.size(); ++i)
                                            d(static_cast<Eigen::Index>(i), saved[i]) -= 1.0;
                                          t.accumulate(logits, d * (inv * g(0, 0)));
                                        });
}

}  // namespace myconcept::ad
