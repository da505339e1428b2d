// Copyright 2026 The MyConcept Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "myconcept/core/errors.hpp"

namespace myconcept {

/// RGB image, row-major, interleaved channels, values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(int h, int w, double fill = 0.0)
      : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, fill) {}

  double& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  double at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }

  bool empty() const { return pixels.empty(); }
  bool operator==(const Image&) const = default;
};

inline void validate_image(const Image& img) {
  if (img.height <= 0 || img.width <= 0 ||
      img.pixels.size() != static_cast<std::size_t>(img.height) * img.width * 3) {
    throw DimensionError("image buffer does not match its declared shape");
  }
  for (double v : img.pixels) {
    if (!std::isfinite(v)) throw InputError("image contains non-finite pixels");
  }
}

inline Image hflip(const Image& img) {
  Image out(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, img.width - 1 - x, c) = img.at(y, x, c);
  return out;
}

/// Bilinear sample with edge clamping.
inline double sample_bilinear(const Image& img, double y, double x, int c) {
  y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, img.height - 1);
  const int x1 = std::min(x0 + 1, img.width - 1);
  const double fy = y - y0;
  const double fx = x - x0;
  return (1 - fy) * ((1 - fx) * img.at(y0, x0, c) + fx * img.at(y0, x1, c)) +
         fy * ((1 - fx) * img.at(y1, x0, c) + fx * img.at(y1, x1, c));
}

/// Rotation about the image centre; out-of-frame samples take the nearest edge pixel.
inline Image rotate(const Image& img, double degrees) {
  const double rad = degrees * 3.14159265358979323846 / 180.0;
  const double cs = std::cos(rad);
  const double sn = std::sin(rad);
  const double cy = (img.height - 1) / 2.0;
  const double cx = (img.width - 1) / 2.0;
  Image out(img.height, img.width);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double dy = y - cy;
      const double dx = x - cx;
      const double sy = cy + cs * dy - sn * dx;
      const double sx = cx + sn * dy + cs * dx;
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = sample_bilinear(img, sy, sx, c);
    }
  }
  return out;
}

inline Image scale_brightness(const Image& img, double factor) {
  Image out = img;
  for (double& v : out.pixels) v = std::clamp(v * factor, 0.0, 1.0);
  return out;
}

/// Centre-crop to a square, then bilinear resize to `size`×`size`.
inline Image center_crop_resize(const Image& img, int size) {
  const int side = std::min(img.height, img.width);
  const double oy = (img.height - side) / 2.0;
  const double ox = (img.width - side) / 2.0;
  const double step = static_cast<double>(side) / size;
  Image out(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < 3; ++c)
        out.at(y, x, c) = sample_bilinear(img, oy + (y + 0.5) * step - 0.5, ox + (x + 0.5) * step - 0.5, c);
  return out;
}

}  // namespace myconcept
