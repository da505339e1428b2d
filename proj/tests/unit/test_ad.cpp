// Copyright 2026 The MyConcept Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <functional>
#include <vector>

#include "myconcept/ad/ops.hpp"
#include "myconcept/core/random.hpp"

namespace {

using namespace myconcept;
using namespace myconcept::ad;

using Graph = std::function<Var(Tape&, const std::vector<Var>&)>;

// Central differences on every input entry, compared with the tape's gradients.
double max_gradient_error(const Graph& f, std::vector<Matrix> inputs, double eps = 1e-6) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& m : inputs) vars.push_back(tape.variable(m));
  Var out = f(tape, vars);
  tape.backward(out);
  double worst = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Matrix analytic = tape.grad(vars[k]);
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      auto eval = [&](double delta) {
        auto shifted = inputs;
        shifted[k].data()[i] += delta;
        Tape t;
        std::vector<Var> vs;
        for (const auto& m : shifted) vs.push_back(t.constant(m));
        return f(t, vs).scalar();
      };
      const double numeric = (eval(eps) - eval(-eps)) / (2 * eps);
      worst = std::max(worst, std::abs(numeric - analytic.data()[i]) / std::max(1.0, std::abs(numeric)));
    }
  }
  return worst;
}

// Contracts a matrix-valued node against fixed weights to get a scalar.
Var contract(Tape& t, Var x, std::uint64_t seed) {
  Rng rng(seed);
  return sum(hadamard(x, t.constant(rng.normal_matrix(x.rows(), x.cols(), 1.0))));
}

Matrix random(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  Rng rng(seed);
  return rng.normal_matrix(r, c, 1.0);
}

TEST(Autodiff, MatmulAndTransposedMatmul) {
  EXPECT_LT(max_gradient_error([](Tape& t, const std::vector<Var>& v) { return contract(t, matmul(v[0], v[1]), 1); },
                               {random(3, 4, 1), random(4, 2, 2)}),
            1e-7);
  EXPECT_LT(max_gradient_error([](Tape& t, const std::vector<Var>& v) { return contract(t, matmul_nt(v[0], v[1]), 2); },
                               {random(3, 4, 3), random(5, 4, 4)}),
            1e-7);
}

TEST(Autodiff, ElementwiseOps) {
  const std::vector<Matrix> in = {random(3, 3, 5), random(3, 3, 6)};
  EXPECT_LT(max_gradient_error([](Tape& t, const std::vector<Var>& v) { return contract(t, add(v[0], v[1]), 3); }, in), 1e-7);
  EXPECT_LT(max_gradient_error([](Tape& t, const std::vector<Var>& v) { return contract(t, sub(v[0], v[1]), 4); }, in), 1e-7);
  EXPECT_LT(max_gradient_error([](Tape& t, const std::vector<Var>& v) { return contract(t, hadamard(v[0], v[1]), 5); }, in),
            1e-7);
  EXPECT_LT(max_gradient_error([](Tape& t, const std::vector<Var>& v) { return contract(t, scale(v[0], -2.5), 6); }, in), 1e-7);
  EXPECT_LT(max_gradient_error([](Tape& t, const std::vector<Var>& v) { return contract(t, gelu(v[0]), 7); }, in), 1e-7);
}

TEST(Autodiff, RowBroadcastAndReductions) {
  EXPECT_LT(max_gradient_error([](Tape& t, const std::vector<Var>& v) { return contract(t, add_row(v[0], v[1]), 8); },
                               {random(4, 3, 7), random(1, 3, 8)}),
            1e-7);
  EXPECT_LT(max_gradient_error([](Tape&, const std::vector<Var>& v) { return scale(square(mean(v[0])), 1.0); },
                               {random(2, 5, 9)}),
            1e-7);
}

TEST(Autodiff, SlicingConcatenationAndGather) {
  const std::vector<Matrix> in = {random(3, 4, 10), random(2, 4, 11)};
  EXPECT_LT(max_gradient_error(
                [](Tape& t, const std::vector<Var>& v) { return contract(t, concat_rows({v[0], v[1]}), 9); }, in),
            1e-7);
  EXPECT_LT(max_gradient_error(
                [](Tape& t, const std::vector<Var>& v) {
                  std::vector<Var> parts = {slice_cols(v[0], 0, 2), slice_cols(v[0], 2, 2)};
                  return contract(t, concat_cols(parts), 10);
                },
                in),
            1e-7);
  EXPECT_LT(max_gradient_error(
                [](Tape& t, const std::vector<Var>& v) {
                  const std::vector<int> ids = {2, 0, 2};
                  return contract(t, gather_rows(v[0], ids), 11);
                },
                in),
            1e-7);
  EXPECT_LT(
      max_gradient_error([](Tape& t, const std::vector<Var>& v) { return contract(t, slice_rows(v[0], 1, 2), 12); }, in),
      1e-7);
}

TEST(Autodiff, LayerNormSoftmaxAndNorms) {
  EXPECT_LT(max_gradient_error(
                [](Tape& t, const std::vector<Var>& v) { return contract(t, layer_norm(v[0], v[1], v[2]), 13); },
                {random(3, 6, 12), random(1, 6, 13), random(1, 6, 14)}),
            1e-6);
  EXPECT_LT(max_gradient_error([](Tape& t, const std::vector<Var>& v) { return contract(t, softmax_rows(v[0]), 14); },
                               {random(4, 5, 15)}),
            1e-7);
  EXPECT_LT(max_gradient_error(
                [](Tape& t, const std::vector<Var>& v) {
                  BoolMatrix mask = BoolMatrix::Constant(4, 5, false);
                  mask(0, 4) = mask(1, 3) = true;
                  return contract(t, softmax_rows(v[0], &mask), 15);
                },
                {random(4, 5, 16)}),
            1e-7);
  EXPECT_LT(max_gradient_error(
                [](Tape& t, const std::vector<Var>& v) { return contract(t, rescale_rows_to_norm(v[0], v[1]), 16); },
                {random(2, 4, 17), Matrix::Constant(1, 1, 1.7)}),
            1e-7);
  EXPECT_LT(max_gradient_error([](Tape&, const std::vector<Var>& v) { return mean_row_norm(v[0]); }, {random(3, 4, 18)}),
            1e-7);
}

TEST(Autodiff, CrossEntropyMatchesDirectFormula) {
  const Matrix logits = random(3, 5, 19);
  const std::vector<int> targets = {1, 4, 0};
  Tape t;
  const double ce = cross_entropy(t.constant(logits), targets).scalar();
  double expected = 0;
  for (int r = 0; r < 3; ++r) {
    const double lse = std::log(logits.row(r).array().exp().sum());
    expected += lse - logits(r, targets[static_cast<std::size_t>(r)]);
  }
  EXPECT_NEAR(ce, expected / 3, 1e-12);
  EXPECT_LT(max_gradient_error([&](Tape&, const std::vector<Var>& v) { return cross_entropy(v[0], targets); }, {logits}),
            1e-7);
}

TEST(Autodiff, SoftmaxRowsSumToOneAndMaskedEntriesAreZero) {
  BoolMatrix mask = BoolMatrix::Constant(2, 3, false);
  mask(1, 0) = true;
  const Matrix p = softmax_rows_value(random(2, 3, 20), &mask);
  EXPECT_NEAR(p.row(0).sum(), 1.0, 1e-15);
  EXPECT_NEAR(p.row(1).sum(), 1.0, 1e-15);
  EXPECT_EQ(p(1, 0), 0.0);
}

TEST(Autodiff, BackwardRejectsNonScalarRoot) {
  Tape t;
  Var x = t.variable(random(2, 2, 21));
  EXPECT_THROW(t.backward(x), DimensionError);
}

TEST(Autodiff, GradientsAccumulateOverReuse) {
  Tape t;
  Var x = t.variable(Matrix::Constant(1, 1, 3.0));
  Var y = add(hadamard(x, x), x);  // x² + x
  t.backward(y);
  EXPECT_DOUBLE_EQ(t.grad(x)(0, 0), 7.0);
}

}  // namespace
