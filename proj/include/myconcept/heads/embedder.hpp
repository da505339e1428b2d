// Copyright 2026 The MyConcept Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "myconcept/core/image.hpp"
#include "myconcept/core/linalg.hpp"
#include "myconcept/vlm/encoder.hpp"

namespace myconcept::heads {

using vlm::VisionFeatures;

/// Frozen embedder the concept heads score. It soft-assigns chromatic pixels to the
/// 64 cells of a 4-level RGB lattice and measures which colours touch each other,
/// so a two-coloured object is identified by its colour adjacency pattern.
class ColorAdjacencyEmbedder {
 public:
  static constexpr int kLevels = 4;
  static constexpr int kBins = kLevels * kLevels * kLevels;

  struct Config {
    double sigma = 0.06;
    double tau = 3.0;
    double chroma_floor = 0.25;
    double chroma_ramp = 0.2;
  };

  ColorAdjacencyEmbedder() : ColorAdjacencyEmbedder(Config{}) {}
  explicit ColorAdjacencyEmbedder(Config cfg) : cfg_(cfg) {
    for (int b = 0; b < kBins; ++b) {
      levels_[b] = {b / 16, (b / 4) % 4, b % 4};
      for (int c = 0; c < 3; ++c) centers_[b][c] = 0.125 + 0.25 * levels_[b][c];
    }
    for (int k = 0; k < kBins; ++k)
      for (int l = k + 1; l < kBins; ++l) {
        int dist = 0;
        for (int c = 0; c < 3; ++c) dist += std::abs(levels_[k][c] - levels_[l][c]);
        if (dist >= 2) pairs_.emplace_back(k, l);
      }
  }

  std::string id() const { return "color-adjacency/v1"; }
  int dim() const { return static_cast<int>(pairs_.size()); }

  Vector embed(const Image& img) const {
    validate_image(img);
    const int h = img.height;
    const int w = img.width;
    Matrix assign(static_cast<Eigen::Index>(h) * w, kBins);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const Eigen::Index row = static_cast<Eigen::Index>(y) * w + x;
        double px[3];
        double lo = 1e9, hi = -1e9;
        for (int c = 0; c < 3; ++c) {
          px[c] = img.at(y, x, c);
          lo = std::min(lo, px[c]);
          hi = std::max(hi, px[c]);
        }
        const double chroma = std::clamp((hi - lo - cfg_.chroma_floor) / cfg_.chroma_ramp, 0.0, 1.0);
        double total = 0;
        for (int b = 0; b < kBins; ++b) {
          double d2 = 0;
          for (int c = 0; c < 3; ++c) d2 += (px[c] - centers_[b][c]) * (px[c] - centers_[b][c]);
          assign(row, b) = std::exp(-d2 / (2 * cfg_.sigma * cfg_.sigma));
          total += assign(row, b);
        }
        assign.row(row) *= total > 0 ? chroma / total : 0.0;
      }
    }
    // Horizontal and vertical neighbour pairs, as two stacked matrices.
    const Eigen::Index n_pairs = static_cast<Eigen::Index>(h) * (w - 1) + static_cast<Eigen::Index>(h - 1) * w;
    Matrix first(n_pairs, kBins), second(n_pairs, kBins);
    Eigen::Index p = 0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const Eigen::Index row = static_cast<Eigen::Index>(y) * w + x;
        if (x + 1 < w) {
          first.row(p) = assign.row(row);
          second.row(p++) = assign.row(row + 1);
        }
        if (y + 1 < h) {
          first.row(p) = assign.row(row);
          second.row(p++) = assign.row(row + w);
        }
      }
    Matrix joint = first.transpose() * second;
    joint += joint.transpose().eval();
    Vector f(dim());
    for (std::size_t i = 0; i < pairs_.size(); ++i)
      f(static_cast<Eigen::Index>(i)) = 1.0 - std::exp(-joint(pairs_[i].first, pairs_[i].second) / cfg_.tau);
    return f;
  }

  /// Embedding wrapped as VisionFeatures (one token) so heads can verify the source.
  VisionFeatures features(const Image& img) const {
    VisionFeatures out;
    out.summary_token = embed(img);
    out.patch_tokens = out.summary_token.transpose();
    out.source_id = id();
    return out;
  }

 private:
  Config cfg_;
  std::array<std::array<int, 3>, kBins> levels_{};
  std::array<std::array<double, 3>, kBins> centers_{};
  std::vector<std::pair<int, int>> pairs_;
};

}  // namespace myconcept::heads
