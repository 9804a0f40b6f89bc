#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <tuple>
#include <vector>

#include "crowdseg/backend.hpp"
#include "crowdseg/rng.hpp"
#include "crowdseg/scene.hpp"

namespace crowdseg {

/// Deterministic scene-bound implementation of the backbone interfaces.
///
/// Decoding rules, per prompt:
///   - prompt inside GT object k: candidate 0 = k's visible mask, candidates
///     1/2 = its top/bottom halves, candidate 3 = the full shape dilated by
///     1.2x about its box center (over-segmentation);
///   - background prompt: small discs around the point.
///
/// Token synthesis plants a seeded linear signal so the scoring heads have a
/// ground-truth-consistent optimum:
///   - semantic features: per-channel sign direction v (seeded), cell value
///     kFgGain * v[ch] * (+1 inside any visible mask at the cell center, else
///     -1), plus kFeatNoise Gaussian noise keyed on (seed, image, cell);
///   - mask/IoU tokens: seeded mixing matrix applied to [candidate IoU to GT,
///     part flag, foreground flag], plus keyed noise;
///   - native_iou: true candidate IoU corrupted by sigma=0.1 keyed Gaussian
///     noise, clamped to [0,1] (the frozen IoU head's realistic imperfection).
///
/// All randomness is keyed on (backend seed, absolute scene coordinates), so a
/// given logical prompt decodes identically regardless of batch composition or
/// crop window. The backend is immutable after construction; decode calls are
/// thread-safe.
class OracleBackend : public Backend {
 public:
  static constexpr double kMaskLogit = 8.0;
  static constexpr double kFgGain = 2.5;
  static constexpr double kFeatNoise = 0.35;
  static constexpr double kTokenNoise = 0.3;
  static constexpr double kNativeIouNoise = 0.1;

  OracleBackend(SceneSpec scene, BackendCaps caps, std::uint64_t seed)
      : scene_(std::move(scene)), caps_(caps), seed_(seed) {
    caps_.validate();
    gt_ = derive_ground_truth(scene_);
    owners_ = owner_map(gt_, scene_.canvas_w, scene_.canvas_h);
    fg_direction_.resize(std::size_t(caps_.feature_channels));
    Rng dir_rng(hash_mix(seed_, hash_str("fg-direction")));
    for (auto& v : fg_direction_) v = dir_rng.uniform() < 0.5 ? -1.0 : 1.0;
    const int ct = caps_.token_channels;
    mix_mask_ = Tensor3(ct, 3, 1);
    mix_iou_ = Tensor3(ct, 3, 1);
    Rng mix_rng(hash_mix(seed_, hash_str("token-mix")));
    for (auto& v : mix_mask_.data) v = 1.2 * mix_rng.gaussian();
    for (auto& v : mix_iou_.data) v = 1.2 * mix_rng.gaussian();
  }

  const GroundTruth& ground_truth() const { return gt_; }
  const SceneSpec& scene() const { return scene_; }
  const std::vector<double>& planted_fg_direction() const { return fg_direction_; }

  BackendCaps caps() const override { return caps_; }

  FeatureMap encode_image(const ImageView& view) const override {
    return make_features(view, hash_str("sam-feat"), /*plant_signal=*/false);
  }

  FeatureMap extract_semantic_features(const ImageView& view) const override {
    return make_features(view, hash_str("dino-feat"), /*plant_signal=*/true);
  }

  DecodeResult decode_prompts(const FeatureMap& feat,
                              const std::vector<PointPrompt>& prompts) const override {
    if (prompts.empty()) throw std::invalid_argument("decode_prompts: empty prompt batch");
    const WindowCache& cache = window_cache(feat.window_x, feat.window_y,
                                            feat.window_w, feat.window_h);
    const int n = int(prompts.size());
    const int res = caps_.native_mask_resolution;
    DecodeResult out;
    out.n = n;
    out.mask_w = res;
    out.mask_h = res;
    out.masks.reserve(std::size_t(n) * 4);
    out.mask_tokens = Tensor3(n, 4, caps_.token_channels);
    out.iou_token = Tensor3(n, 1, caps_.token_channels);
    out.native_iou = Tensor3(n, 4, 1);
    for (int i = 0; i < n; ++i) {
      const auto& p = prompts[std::size_t(i)];
      if (p.x < 0 || p.y < 0 || p.x >= feat.window_w || p.y >= feat.window_h)
        throw std::invalid_argument("decode_prompts: prompt outside canvas");
      const double sx = feat.window_x + p.x;
      const double sy = feat.window_y + p.y;
      const int owner = owner_at(sx, sy);
      double ious[4];
      bool part[4] = {false, true, true, false};
      bool fg = false;
      if (owner >= 0 && cache.objects[std::size_t(owner)].present) {
        fg = true;
        const ObjectCandidates& oc = cache.objects[std::size_t(owner)];
        for (int j = 0; j < 4; ++j) {
          out.masks.push_back(logits_from_bitmask(oc.masks[std::size_t(j)]));
          ious[j] = oc.iou_to_gt[std::size_t(j)];
        }
      } else {
        for (int j = 0; j < 4; ++j) {
          BitMask blob = background_blob(p, feat, j);
          ious[j] = best_gt_iou(blob, cache);
          out.masks.push_back(logits_from_bitmask(blob));
          part[j] = false;
        }
      }
      const std::uint64_t pkey =
          hash_mix(seed_, hash_mix(std::uint64_t(std::llround(sx * 8.0)) << 21,
                                   std::uint64_t(std::llround(sy * 8.0))));
      double mean_iou = 0.0;
      for (int j = 0; j < 4; ++j) {
        mean_iou += 0.25 * ious[j];
        const double signal[3] = {ious[j], part[j] ? 1.0 : 0.0, fg ? 1.0 : -1.0};
        for (int c = 0; c < caps_.token_channels; ++c) {
          double v = 0.0;
          for (int s = 0; s < 3; ++s) v += mix_mask_.at(c, s, 0) * signal[s];
          v += kTokenNoise * keyed_gaussian(hash_mix(pkey, 0x300ull + std::uint64_t(j * 64 + c)));
          out.mask_tokens.at(i, j, c) = v;
        }
        const double noise =
            kNativeIouNoise * keyed_gaussian(hash_mix(pkey, 0x900ull + std::uint64_t(j)));
        out.native_iou.at(i, j, 0) = std::clamp(ious[j] + noise, 0.0, 1.0);
      }
      const double usig[3] = {mean_iou, fg ? 1.0 : -1.0, 1.0};
      for (int c = 0; c < caps_.token_channels; ++c) {
        double v = 0.0;
        for (int s = 0; s < 3; ++s) v += mix_iou_.at(c, s, 0) * usig[s];
        v += kTokenNoise * keyed_gaussian(hash_mix(pkey, 0x700ull + std::uint64_t(c)));
        out.iou_token.at(i, 0, c) = v;
      }
    }
    return out;
  }

  BitMask decode_box_prompt(const FeatureMap& feat, const BoxXYXY& box) const override {
    if (!box.valid() || box.area() <= 0.0)
      throw std::invalid_argument("decode_box_prompt: degenerate box");
    const BoxXYXY scene_box = translate(box, feat.window_x, feat.window_y);
    double best = 0.0;
    int best_k = -1;
    for (std::size_t k = 0; k < gt_.visible_boxes.size(); ++k) {
      const double v = iou_boxes(scene_box, gt_.visible_boxes[k]);
      if (v > best) {
        best = v;
        best_k = int(k);
      }
    }
    BitMask out(feat.window_w, feat.window_h);
    if (best_k < 0) return out;  // background-only box
    const BitMask& vis = gt_.visible_masks[std::size_t(best_k)];
    for (int y = 0; y < feat.window_h; ++y) {
      const int sy = feat.window_y + y;
      if (sy < 0 || sy >= scene_.canvas_h) continue;
      for (int x = 0; x < feat.window_w; ++x) {
        const int sx = feat.window_x + x;
        if (sx >= 0 && sx < scene_.canvas_w && vis.get(sx, sy)) out.set(x, y, true);
      }
    }
    return out;
  }

 private:
  struct ObjectCandidates {
    bool present = false;       // false when the object has no pixels in this window
    BitMask masks[4];           // whole / top / bottom / dilated, at native res
    double iou_to_gt[4] = {0, 0, 0, 0};
  };
  struct WindowCache {
    std::vector<ObjectCandidates> objects;  // indexed by GT entry
  };

  int owner_at(double sx, double sy) const {
    const int ix = int(std::floor(sx));
    const int iy = int(std::floor(sy));
    if (ix < 0 || iy < 0 || ix >= scene_.canvas_w || iy >= scene_.canvas_h) return -1;
    return owners_[std::size_t(iy) * scene_.canvas_w + ix];
  }

  FeatureMap make_features(const ImageView& view, std::uint64_t salt,
                           bool plant_signal) const {
    if (view.image == nullptr) throw std::invalid_argument("oracle: null image view");
    const int s = caps_.patch_size;
    if (view.image->width % s != 0 || view.image->height % s != 0)
      throw std::invalid_argument("oracle: view dims must be divisible by patch size");
    FeatureMap f(view.image->height / s, view.image->width / s, caps_.feature_channels);
    f.window_x = view.origin_x;
    f.window_y = view.origin_y;
    f.window_w = view.image->width;
    f.window_h = view.image->height;
    const std::uint64_t base = hash_mix(seed_ ^ salt, view.image->content_hash());
    for (int r = 0; r < f.h; ++r) {
      for (int c = 0; c < f.w; ++c) {
        const double px = view.origin_x + (c + 0.5) * s;
        const double py = view.origin_y + (r + 0.5) * s;
        double sign = 0.0;
        if (plant_signal) sign = owner_at(px, py) >= 0 ? 1.0 : -1.0;
        double* cell = f.cell(r, c);
        const std::uint64_t ckey = hash_mix(base, std::uint64_t(std::llround(px)) << 22 |
                                                      std::uint64_t(std::llround(py)));
        for (int ch = 0; ch < caps_.feature_channels; ++ch) {
          double v = kFeatNoise * keyed_gaussian(hash_mix(ckey, std::uint64_t(ch)));
          if (plant_signal) v += kFgGain * sign * fg_direction_[std::size_t(ch)];
          cell[ch] = v;
        }
      }
    }
    return f;
  }

  SoftMask logits_from_bitmask(const BitMask& bm) const {
    SoftMask out(bm.width(), bm.height(), -kMaskLogit, /*logit=*/true);
    const auto& words = bm.words();
    const int wpr = bm.words_per_row();
    for (int y = 0; y < bm.height(); ++y) {
      double* row = &out.data[std::size_t(y) * bm.width()];
      for (int w = 0; w < wpr; ++w) {
        std::uint64_t word = words[std::size_t(y) * wpr + w];
        while (word) {
          const int b = std::countr_zero(word);
          row[w * 64 + b] = kMaskLogit;
          word &= word - 1;
        }
      }
    }
    return out;
  }

  BitMask background_blob(const PointPrompt& p, const FeatureMap& feat, int candidate) const {
    const int res = caps_.native_mask_resolution;
    const double scale_x = double(res) / feat.window_w;
    const double scale_y = double(res) / feat.window_h;
    const double cx = p.x * scale_x;
    const double cy = p.y * scale_y;
    const double radius = (0.015 + 0.005 * candidate) * res;
    BitMask m(res, res);
    const int y0 = std::max(0, int(std::floor(cy - radius)));
    const int y1 = std::min(res - 1, int(std::ceil(cy + radius)));
    for (int y = y0; y <= y1; ++y) {
      const double dy = (y + 0.5 - cy) / radius;
      const double t = 1.0 - dy * dy;
      if (t <= 0.0) continue;
      const double hw = radius * std::sqrt(t) / std::max(scale_y / scale_x, 1e-9);
      const int x0 = int(std::ceil(cx - hw - 0.5));
      const int x1 = int(std::floor(cx + hw - 0.5));
      if (x1 >= x0) m.fill_row_span(y, std::max(0, x0), std::min(res, x1 + 1));
    }
    if (m.empty_mask()) {
      const int ix = std::clamp(int(cx), 0, res - 1);
      const int iy = std::clamp(int(cy), 0, res - 1);
      m.set(ix, iy, true);
    }
    return m;
  }

  double best_gt_iou(const BitMask& blob, const WindowCache& cache) const {
    double best = 0.0;
    for (const auto& oc : cache.objects) {
      if (!oc.present) continue;
      const std::size_t inter = blob.intersection_count(oc.masks[0]);
      if (inter == 0) continue;
      best = std::max(best, double(inter) / double(blob.union_count(oc.masks[0])));
    }
    return best;
  }

  const WindowCache& window_cache(int wx, int wy, int ww, int wh) const {
    const std::tuple<int, int, int, int> key{wx, wy, ww, wh};
    std::lock_guard<std::mutex> lock(cache_mutex_);
    auto it = windows_.find(key);
    if (it != windows_.end()) return *it->second;
    auto cache = std::make_unique<WindowCache>();
    cache->objects.resize(gt_.visible_masks.size());
    const int res = caps_.native_mask_resolution;
    for (std::size_t k = 0; k < gt_.visible_masks.size(); ++k) {
      ObjectCandidates& oc = cache->objects[k];
      const BitMask& vis = gt_.visible_masks[k];
      BitMask whole(res, res);
      for (int y = 0; y < res; ++y) {
        const int sy = wy + int(std::floor((y + 0.5) * double(wh) / res));
        if (sy < 0 || sy >= scene_.canvas_h) continue;
        for (int x = 0; x < res; ++x) {
          const int sx = wx + int(std::floor((x + 0.5) * double(ww) / res));
          if (sx >= 0 && sx < scene_.canvas_w && vis.get(sx, sy)) whole.set(x, y, true);
        }
      }
      if (whole.empty_mask()) continue;
      oc.present = true;
      const auto bbox = mask_to_box(whole);
      const int mid = int((bbox->y1 + bbox->y2) / 2.0);
      BitMask top = whole, bottom = whole;
      BitMask rows(res, res);
      for (int y = 0; y < mid; ++y) rows.fill_row_span(y, 0, res);
      top.and_with(rows);
      bottom.subtract(rows);
      // 1.2x dilation of the full shape about its box center; includes
      // occluded area and a background ring.
      const SceneObject& obj = scene_.objects[std::size_t(gt_.source_index[k])];
      const auto fbox = mask_to_box(obj.full_mask);
      const double fcx = (fbox->x1 + fbox->x2) / 2.0;
      const double fcy = (fbox->y1 + fbox->y2) / 2.0;
      BitMask dilated(res, res);
      for (int y = 0; y < res; ++y) {
        const double sy = wy + (y + 0.5) * double(wh) / res;
        const double oy = fcy + (sy - fcy) / 1.2;
        const int iy = int(std::floor(oy));
        if (iy < 0 || iy >= scene_.canvas_h) continue;
        for (int x = 0; x < res; ++x) {
          const double sx = wx + (x + 0.5) * double(ww) / res;
          const double ox = fcx + (sx - fcx) / 1.2;
          const int ix = int(std::floor(ox));
          if (ix >= 0 && ix < scene_.canvas_w && obj.full_mask.get(ix, iy))
            dilated.set(x, y, true);
        }
      }
      oc.masks[0] = std::move(whole);
      oc.masks[1] = std::move(top);
      oc.masks[2] = std::move(bottom);
      oc.masks[3] = std::move(dilated);
      oc.iou_to_gt[0] = 1.0;
      for (int j = 1; j < 4; ++j)
        oc.iou_to_gt[j] = iou_masks(oc.masks[std::size_t(j)], oc.masks[0]);
    }
    auto [pos, _] = windows_.emplace(key, std::move(cache));
    return *pos->second;
  }

  SceneSpec scene_;
  GroundTruth gt_;
  BackendCaps caps_;
  std::uint64_t seed_;
  std::vector<std::int16_t> owners_;
  std::vector<double> fg_direction_;
  Tensor3 mix_mask_, mix_iou_;
  mutable std::mutex cache_mutex_;
  mutable std::map<std::tuple<int, int, int, int>, std::unique_ptr<WindowCache>> windows_;
};

}  // namespace crowdseg
