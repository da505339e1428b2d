// Copyright 2026 The MyConcept Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "myconcept/core/image.hpp"
#include "myconcept/vlm/types.hpp"

namespace myconcept::vlm {

/// What the personalisation pipeline needs from a vision-language model. The toy
/// model implements it; a real backbone plugs in by wrapping its encoder, its
/// decoder and an autograd pass that returns gradients for injected vectors.
class VlmBackend {
 public:
  virtual ~VlmBackend() = default;

  virtual FusionMode mode() const = 0;
  /// Width of an injected concept vector.
  virtual int concept_dim() const = 0;
  virtual VisionFeatures encode_image(const Image& img) const = 0;

  virtual std::vector<int> encode_text(const std::string& text) const = 0;
  virtual std::string decode_tokens(const std::vector<int>& ids) const = 0;
  virtual std::optional<int> token_id(const std::string& word) const = 0;

  /// Starting point for a new concept vector given one image.
  virtual Vector mean_image_token(const VisionFeatures& f) const = 0;

  virtual GenerationTrace generate(const VisionFeatures& f, const std::string& instruction,
                                   const std::vector<InjectedConcept>& injected, const DecodeConfig& dc) const = 0;
  virtual LossResult forward_loss(const VisionFeatures& f, const std::vector<int>& instruction,
                                  const std::vector<int>& target, const std::vector<InjectedConcept>& injected,
                                  const LossOptions& opt) const = 0;

  /// Fingerprint of every frozen weight; personalisation must leave it unchanged.
  virtual std::uint32_t parameter_checksum() const = 0;
};

}  // namespace myconcept::vlm
