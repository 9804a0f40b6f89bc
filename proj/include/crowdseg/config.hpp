#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "crowdseg/backend.hpp"
#include "crowdseg/eps.hpp"
#include "crowdseg/pipeline.hpp"
#include "crowdseg/rng.hpp"
#include "crowdseg/scene.hpp"
#include "crowdseg/trainer.hpp"

namespace crowdseg {

/// One declarative run configuration. Every field has a documented default
/// (see config_to_json, which always emits the complete set); JSON input may
/// override any subset but unknown keys are rejected.
struct Config {
  std::string backend = "oracle";  // "oracle" | "real"
  std::string weights_dir;         // real backend weight directory
  std::uint64_t seed = 0;
  int workers = 1;
  int n_scenes = 10;  // scenes generated for train/eval/bench datasets
  SceneParams scene;
  BackendCaps caps;
  TrainConfig train;
  PipelineConfig pipeline;
};

namespace detail {

class StrictObject {
 public:
  StrictObject(const nlohmann::json& j, const std::string& where) : j_(j), where_(where) {
    if (!j.is_object())
      throw std::invalid_argument("config: " + where + " must be a JSON object");
  }
  ~StrictObject() = default;

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->get<T>();
    } catch (const nlohmann::json::exception&) {
      throw std::invalid_argument("config: bad type for " + where_ + "." + key);
    }
  }

  const nlohmann::json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key()))
        throw std::invalid_argument("config: unknown key " + where_ + "." + it.key());
  }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline Config config_from_json(const nlohmann::json& j) {
  Config c;
  detail::StrictObject root(j, "root");
  root.get("backend", c.backend);
  root.get("weights_dir", c.weights_dir);
  root.get("seed", c.seed);
  root.get("workers", c.workers);
  root.get("n_scenes", c.n_scenes);
  if (const auto* s = root.child("scene")) {
    detail::StrictObject o(*s, "scene");
    o.get("n_objects", c.scene.n_objects);
    o.get("overlap_level", c.scene.overlap_level);
    o.get("canvas_w", c.scene.canvas_w);
    o.get("canvas_h", c.scene.canvas_h);
    o.get("min_radius", c.scene.min_radius);
    o.get("max_radius", c.scene.max_radius);
    o.finish();
  }
  if (const auto* s = root.child("caps")) {
    detail::StrictObject o(*s, "caps");
    o.get("patch_size", c.caps.patch_size);
    o.get("token_channels", c.caps.token_channels);
    o.get("feature_channels", c.caps.feature_channels);
    o.get("native_mask_resolution", c.caps.native_mask_resolution);
    o.finish();
  }
  if (const auto* s = root.child("train")) {
    detail::StrictObject o(*s, "train");
    o.get("learning_rate", c.train.learning_rate);
    o.get("weight_decay", c.train.weight_decay);
    o.get("beta1", c.train.beta1);
    o.get("beta2", c.train.beta2);
    o.get("iterations", c.train.iterations);
    o.get("batch_images", c.train.batch_images);
    o.get("pos_points_per_image", c.train.pos_points_per_image);
    o.get("neg_points_per_image", c.train.neg_points_per_image);
    o.finish();
  }
  if (const auto* s = root.child("pipeline")) {
    detail::StrictObject o(*s, "pipeline");
    o.get("grid_single", c.pipeline.grid_single);
    o.get("grid_per_crop", c.pipeline.grid_per_crop);
    o.get("heat_threshold", c.pipeline.heat_threshold);
    o.get("output_threshold", c.pipeline.output_threshold);
    o.get("nms_iou", c.pipeline.nms_iou);
    o.get("multi_crop", c.pipeline.multi_crop);
    o.get("crop_window", c.pipeline.crop_window);
    o.get("crop_overlap", c.pipeline.crop_overlap);
    if (const auto* e = o.child("eps")) {
      detail::StrictObject eo(*e, "pipeline.eps");
      eo.get("batch_size", c.pipeline.eps.batch_size);
      eo.get("budget_k", c.pipeline.eps.budget_k);
      eo.get("valid_threshold", c.pipeline.eps.valid_threshold);
      eo.finish();
    }
    o.finish();
  }
  root.finish();
  if (c.backend != "oracle" && c.backend != "real")
    throw std::invalid_argument("config: backend must be \"oracle\" or \"real\"");
  if (c.workers < 1) throw std::invalid_argument("config: workers must be >= 1");
  if (c.n_scenes < 1) throw std::invalid_argument("config: n_scenes must be >= 1");
  c.caps.validate();
  c.train.validate();
  c.pipeline.eps.validate();
  // One seed drives everything; per-component streams are derived from it.
  c.train.seed = c.seed;
  c.pipeline.seed = c.seed;
  c.pipeline.eps.seed = c.seed;
  return c;
}

inline nlohmann::json config_to_json(const Config& c) {
  nlohmann::json j;
  j["backend"] = c.backend;
  j["weights_dir"] = c.weights_dir;
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  j["n_scenes"] = c.n_scenes;
  j["scene"] = {{"n_objects", c.scene.n_objects},
                {"overlap_level", c.scene.overlap_level},
                {"canvas_w", c.scene.canvas_w},
                {"canvas_h", c.scene.canvas_h},
                {"min_radius", c.scene.min_radius},
                {"max_radius", c.scene.max_radius}};
  j["caps"] = {{"patch_size", c.caps.patch_size},
               {"token_channels", c.caps.token_channels},
               {"feature_channels", c.caps.feature_channels},
               {"native_mask_resolution", c.caps.native_mask_resolution}};
  j["train"] = {{"learning_rate", c.train.learning_rate},
                {"weight_decay", c.train.weight_decay},
                {"beta1", c.train.beta1},
                {"beta2", c.train.beta2},
                {"iterations", c.train.iterations},
                {"batch_images", c.train.batch_images},
                {"pos_points_per_image", c.train.pos_points_per_image},
                {"neg_points_per_image", c.train.neg_points_per_image}};
  j["pipeline"] = {{"grid_single", c.pipeline.grid_single},
                   {"grid_per_crop", c.pipeline.grid_per_crop},
                   {"heat_threshold", c.pipeline.heat_threshold},
                   {"output_threshold", c.pipeline.output_threshold},
                   {"nms_iou", c.pipeline.nms_iou},
                   {"multi_crop", c.pipeline.multi_crop},
                   {"crop_window", c.pipeline.crop_window},
                   {"crop_overlap", c.pipeline.crop_overlap},
                   {"eps",
                    {{"batch_size", c.pipeline.eps.batch_size},
                     {"budget_k", c.pipeline.eps.budget_k},
                     {"valid_threshold", c.pipeline.eps.valid_threshold}}}};
  return j;
}

/// Stable hash of the canonical (key-sorted) serialized config; embedded in
/// artifacts so outputs can be traced back to the exact run settings.
inline std::uint64_t config_fingerprint(const Config& c) {
  return hash_str(config_to_json(c).dump());
}

inline Config load_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("config: parse error in " + path + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace crowdseg
