#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "crowdseg/config.hpp"
#include "crowdseg/formats.hpp"
#include "crowdseg/oracle_backend.hpp"
#include "crowdseg/parallel.hpp"
#include "crowdseg/scene.hpp"
#include "crowdseg/trainer.hpp"

namespace crowdseg {

/// One synthetic dataset entry with its scene-bound backend. The same seed
/// derivation is used by every command, so train/annotate/eval stages rebuild
/// identical scenes and identical backend noise from the manifest alone.
struct SyntheticScene {
  std::unique_ptr<OracleBackend> backend;
  Image image;
  DatasetRecord record;
};

inline std::uint64_t derive_scene_seed(std::uint64_t run_seed, int index) {
  return hash_mix(run_seed, hash_mix(hash_str("scene"), std::uint64_t(index)));
}

inline SyntheticScene build_synthetic_scene(const SceneParams& params, const BackendCaps& caps,
                                            std::uint64_t scene_seed, const std::string& id) {
  SyntheticScene out;
  auto [scene, gt] = generate_scene(params, scene_seed);
  (void)gt;  // the backend rederives ground truth from the scene description
  out.backend = std::make_unique<OracleBackend>(std::move(scene), caps,
                                                hash_mix(scene_seed, hash_str("oracle-backend")));
  out.image = render(out.backend->scene());
  out.record.id = id;
  out.record.scene_seed = scene_seed;
  out.record.boxes = out.backend->ground_truth().visible_boxes;
  return out;
}

inline std::vector<SyntheticScene> build_dataset(const SceneParams& params,
                                                 const BackendCaps& caps, std::uint64_t run_seed,
                                                 int n_scenes, int workers,
                                                 const std::string& id_prefix = "scene-") {
  std::vector<SyntheticScene> out(static_cast<std::size_t>(n_scenes));
  parallel_for(n_scenes, workers, [&](int i) {
    out[std::size_t(i)] = build_synthetic_scene(params, caps, derive_scene_seed(run_seed, i),
                                                id_prefix + std::to_string(i));
  });
  return out;
}

/// Rebuilds the scenes named by a manifest (same derivation as build_dataset
/// when the manifest came from the same run seed).
inline std::vector<SyntheticScene> build_from_manifest(const DatasetManifest& manifest,
                                                       const BackendCaps& caps, int workers) {
  std::vector<SyntheticScene> out(manifest.records.size());
  parallel_for(int(manifest.records.size()), workers, [&](int i) {
    out[std::size_t(i)] = build_synthetic_scene(manifest.scene, caps,
                                                manifest.records[std::size_t(i)].scene_seed,
                                                manifest.records[std::size_t(i)].id);
  });
  return out;
}

inline DatasetManifest dataset_manifest(const std::vector<SyntheticScene>& scenes,
                                        const SceneParams& params,
                                        std::uint64_t config_fingerprint) {
  DatasetManifest m;
  m.scene = params;
  m.config_fingerprint = config_fingerprint;
  for (const auto& s : scenes) m.records.push_back(s.record);
  return m;
}

inline std::vector<TrainingExample> prepare_training_set(
    const std::vector<SyntheticScene>& scenes, int workers) {
  std::vector<TrainingExample> out(scenes.size());
  parallel_for(int(scenes.size()), workers, [&](int i) {
    const auto& s = scenes[std::size_t(i)];
    out[std::size_t(i)] =
        prepare_example(*s.backend, ImageView::whole(s.image), s.record.boxes);
  });
  return out;
}

}  // namespace crowdseg
