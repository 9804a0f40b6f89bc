#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "crowdseg/box.hpp"
#include "crowdseg/image.hpp"
#include "crowdseg/mask.hpp"
#include "crowdseg/tensor.hpp"

namespace crowdseg {

/// Thrown when a backend cannot run (missing weights, unsupported input).
/// Never degraded to a silent fallback.
class BackendUnavailable : public std::runtime_error {
 public:
  explicit BackendUnavailable(const std::string& what) : std::runtime_error(what) {}
};

struct BackendCaps {
  int patch_size = 16;              // feature grid stride s
  int token_channels = 32;          // C_tok of mask/IoU tokens
  int feature_channels = 32;        // C of the semantic feature map
  int native_mask_resolution = 256; // side length of decoded mask rasters

  void validate() const {
    if (patch_size <= 0 || token_channels <= 0 || feature_channels <= 0 ||
        native_mask_resolution <= 0)
      throw std::invalid_argument("BackendCaps: all fields must be positive");
  }
};

/// Per-prompt output of the prompt-conditioned mask decoder: 4 candidate mask
/// logit rasters, the decoder's mask tokens (n x 4 x C_tok) and IoU token
/// (n x 1 x C_tok), and the frozen IoU head's predictions (n x 4).
struct DecodeResult {
  int n = 0;
  int mask_w = 0, mask_h = 0;
  std::vector<SoftMask> masks;  // n*4 logit rasters, candidate-major per prompt
  Tensor3 mask_tokens;          // n x 4 x C_tok
  Tensor3 iou_token;            // n x 1 x C_tok
  Tensor3 native_iou;           // n x 4 x 1

  const SoftMask& mask(int prompt, int candidate) const {
    return masks[std::size_t(prompt) * 4 + std::size_t(candidate)];
  }
  SoftMask& mask(int prompt, int candidate) {
    return masks[std::size_t(prompt) * 4 + std::size_t(candidate)];
  }
};

/// Frozen foundation components behind one interface: a SAM-style image
/// encoder + prompt-conditioned mask decoder and a DINO-style semantic feature
/// extractor. Implementations are immutable after construction; all calls are
/// pure and thread-safe.
class Backend {
 public:
  virtual ~Backend() = default;

  virtual BackendCaps caps() const = 0;

  /// Encoder-side features for the decoder (F_SAM). Deterministic per view.
  virtual FeatureMap encode_image(const ImageView& view) const = 0;

  /// Semantic patch features (F_DINO, pre-adapter). Deterministic per view.
  virtual FeatureMap extract_semantic_features(const ImageView& view) const = 0;

  /// Decodes a nonempty batch of point prompts (view-local pixel coords) into
  /// 4 candidate masks per prompt plus token tensors. Mask rasters cover the
  /// view at native_mask_resolution.
  virtual DecodeResult decode_prompts(const FeatureMap& feat,
                                      const std::vector<PointPrompt>& prompts) const = 0;

  /// Single best mask for a box prompt, at full view resolution.
  virtual BitMask decode_box_prompt(const FeatureMap& feat, const BoxXYXY& box) const = 0;
};

}  // namespace crowdseg
