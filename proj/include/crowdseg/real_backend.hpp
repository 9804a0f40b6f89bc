#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "crowdseg/backend.hpp"

namespace crowdseg {

/// Placeholder for a backend driven by real pretrained encoder/decoder
/// weights. Construction validates that the expected weight files exist under
/// the given directory; every entry point reports which file is missing via
/// BackendUnavailable so callers can fall back to the oracle backend. Plugging
/// in a real inference engine means implementing the four Backend methods here
/// while keeping the window/coordinate conventions documented on Backend.
class RealBackend : public Backend {
 public:
  explicit RealBackend(std::filesystem::path weights_dir)
      : weights_dir_(std::move(weights_dir)) {
    for (const char* name : {"image_encoder.bin", "prompt_decoder.bin", "semantic_encoder.bin"}) {
      const auto path = weights_dir_ / name;
      if (!std::filesystem::exists(path)) missing_.push_back(path.string());
    }
  }

  bool available() const { return missing_.empty(); }
  const std::vector<std::string>& missing_files() const { return missing_; }

  BackendCaps caps() const override {
    fail("caps");
    return {};
  }
  FeatureMap encode_image(const ImageView&) const override {
    fail("encode_image");
    return FeatureMap(0, 0, 0);
  }
  FeatureMap extract_semantic_features(const ImageView&) const override {
    fail("extract_semantic_features");
    return FeatureMap(0, 0, 0);
  }
  DecodeResult decode_prompts(const FeatureMap&, const std::vector<PointPrompt>&) const override {
    fail("decode_prompts");
    return {};
  }
  BitMask decode_box_prompt(const FeatureMap&, const BoxXYXY&) const override {
    fail("decode_box_prompt");
    return BitMask(0, 0);
  }

 private:
  [[noreturn]] void fail(const char* what) const {
    std::string msg = "real backend unavailable in ";
    msg += what;
    msg += ": missing ";
    msg += missing_.empty() ? std::string("(inference engine not linked)") : missing_.front();
    throw BackendUnavailable(msg);
  }

  std::filesystem::path weights_dir_;
  std::vector<std::string> missing_;
};

}  // namespace crowdseg
