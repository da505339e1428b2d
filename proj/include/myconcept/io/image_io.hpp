// Copyright 2026 The MyConcept Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "myconcept/core/errors.hpp"
#include "myconcept/core/image.hpp"
#include "myconcept/io/binary.hpp"

namespace myconcept::io {

/// Side length the toy encoder expects.
inline constexpr int kModelImageSize = 32;

inline Image image_from_mat(const cv::Mat& bgr) {
  Image img(bgr.rows, bgr.cols);
  for (int y = 0; y < bgr.rows; ++y)
    for (int x = 0; x < bgr.cols; ++x) {
      const auto& px = bgr.at<cv::Vec3b>(y, x);
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = px[2 - c] / 255.0;
    }
  return img;
}

inline cv::Mat mat_from_image(const Image& img) {
  validate_image(img);
  cv::Mat bgr(img.height, img.width, CV_8UC3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(img.at(y, x, c), 0.0, 1.0);
        bgr.at<cv::Vec3b>(y, x)[2 - c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
  return bgr;
}

/// Decodes PNG or JPEG bytes; `what` names the source in error messages.
inline Image decode_image(const std::vector<std::uint8_t>& bytes, const std::string& what = "image") {
  if (bytes.empty()) throw InputError("empty image data: " + what);
  cv::Mat raw(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<std::uint8_t*>(bytes.data()));
  cv::Mat bgr = cv::imdecode(raw, cv::IMREAD_COLOR);
  if (bgr.empty()) throw InputError("cannot decode image: " + what);
  return image_from_mat(bgr);
}

inline Image load_image(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file(path);
  } catch (const InputError&) {
    throw InputError("cannot read image: " + path.string());
  }
  return decode_image(bytes, path.string());
}

inline std::vector<std::uint8_t> encode_png(const Image& img) {
  std::vector<std::uint8_t> out;
  if (!cv::imencode(".png", mat_from_image(img), out)) throw InputError("PNG encoding failed");
  return out;
}

inline void save_png(const Image& img, const std::filesystem::path& path) { write_file_atomic(path, encode_png(img)); }

/// Brings an arbitrary decoded image to the model's input size (centre crop,
/// bilinear resize). Images already at that size pass through untouched.
inline Image to_model_input(const Image& img, int size = kModelImageSize) {
  if (img.height == size && img.width == size) return img;
  return center_crop_resize(img, size);
}

inline bool has_image_extension(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

}  // namespace myconcept::io
