// Copyright 2026 The MyConcept Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "myconcept/core/image.hpp"
#include "myconcept/core/linalg.hpp"
#include "myconcept/core/random.hpp"

namespace myconcept::vlm {

/// Frozen-encoder output for one image.
struct VisionFeatures {
  Matrix patch_tokens;  // P × d_v
  Vector summary_token;
  std::string source_id;

  bool operator==(const VisionFeatures& o) const {
    return source_id == o.source_id && patch_tokens.rows() == o.patch_tokens.rows() &&
           patch_tokens.cols() == o.patch_tokens.cols() && patch_tokens == o.patch_tokens &&
           summary_token.size() == o.summary_token.size() && summary_token == o.summary_token;
  }
};

struct EncoderConfig {
  int patch_size = 8;
  int d_v = 16;
  int max_patches = 16;
  std::uint64_t seed = 7;
};

/// Fixed random-feature patch encoder. Each patch is summarised by its quadrant
/// colour means, colour spread and edge energy, then mapped through a frozen
/// tanh layer with a learned-looking position code.
class ToyEncoder {
 public:
  static constexpr int kFeatures = 17;

  explicit ToyEncoder(EncoderConfig cfg = {}) : cfg_(cfg) {
    if (cfg_.patch_size < 2 || cfg_.patch_size % 2 != 0) throw InputError("patch size must be even and ≥ 2");
    if (cfg_.d_v < 2 || cfg_.d_v % 2 != 0) throw InputError("d_v must be even");
    Rng rng(cfg_.seed);
    weight_ = rng.normal_matrix(cfg_.d_v, kFeatures, 2.5 / std::sqrt(static_cast<double>(kFeatures)));
    bias_ = rng.normal_matrix(1, cfg_.d_v, 0.3);
    pos_ = rng.normal_matrix(cfg_.max_patches, cfg_.d_v, 0.2);
  }

  const EncoderConfig& config() const { return cfg_; }
  std::string source_id() const { return "toy-encoder/v1/seed" + std::to_string(cfg_.seed); }

  VisionFeatures encode(const Image& img) const {
    validate_image(img);
    const int ps = cfg_.patch_size;
    if (img.height % ps != 0 || img.width % ps != 0)
      throw DimensionError("image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                           " is not divisible by patch size " + std::to_string(ps));
    const int gh = img.height / ps;
    const int gw = img.width / ps;
    const int n = gh * gw;
    if (n > cfg_.max_patches)
      throw DimensionError("image yields " + std::to_string(n) + " patches, encoder supports " +
                           std::to_string(cfg_.max_patches));
    Matrix feats(n, kFeatures);
    for (int py = 0; py < gh; ++py)
      for (int px = 0; px < gw; ++px) feats.row(py * gw + px) = patch_features(img, py * ps, px * ps);
    Matrix pre = feats * weight_.transpose();
    pre.rowwise() += bias_.row(0);
    pre += pos_.topRows(n);
    VisionFeatures out;
    out.patch_tokens = pre.array().tanh().matrix();
    const int half = cfg_.d_v / 2;
    out.summary_token.resize(cfg_.d_v);
    out.summary_token.head(half) = out.patch_tokens.leftCols(half).colwise().maxCoeff().transpose();
    out.summary_token.tail(half) = out.patch_tokens.rightCols(half).colwise().mean().transpose();
    out.source_id = source_id();
    return out;
  }

 private:
  RowVector patch_features(const Image& img, int y0, int x0) const {
    const int ps = cfg_.patch_size;
    const int h = ps / 2;
    RowVector f(kFeatures);
    int k = 0;
    for (int qy = 0; qy < 2; ++qy) {
      for (int qx = 0; qx < 2; ++qx) {
        for (int c = 0; c < 3; ++c) {
          double s = 0;
          for (int y = 0; y < h; ++y)
            for (int x = 0; x < h; ++x) s += img.at(y0 + qy * h + y, x0 + qx * h + x, c);
          f(k++) = s / (h * h) - 0.5;
        }
      }
    }
    const double count = static_cast<double>(ps * ps);
    for (int c = 0; c < 3; ++c) {
      double s = 0, s2 = 0;
      for (int y = 0; y < ps; ++y)
        for (int x = 0; x < ps; ++x) {
          const double v = img.at(y0 + y, x0 + x, c);
          s += v;
          s2 += v * v;
        }
      const double mean = s / count;
      f(k++) = std::sqrt(std::max(0.0, s2 / count - mean * mean)) * 3.0 - 0.3;
    }
    double gx = 0, gy = 0;
    for (int y = 0; y < ps; ++y)
      for (int x = 0; x + 1 < ps; ++x)
        for (int c = 0; c < 3; ++c) gx += std::abs(img.at(y0 + y, x0 + x + 1, c) - img.at(y0 + y, x0 + x, c));
    for (int y = 0; y + 1 < ps; ++y)
      for (int x = 0; x < ps; ++x)
        for (int c = 0; c < 3; ++c) gy += std::abs(img.at(y0 + y + 1, x0 + x, c) - img.at(y0 + y, x0 + x, c));
    f(k++) = gx / (ps * (ps - 1) * 3) * 4.0 - 0.3;
    f(k++) = gy / (ps * (ps - 1) * 3) * 4.0 - 0.3;
    return f;
  }

  EncoderConfig cfg_;
  Matrix weight_;
  Matrix bias_;
  Matrix pos_;
};

}  // namespace myconcept::vlm
