#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "crowdseg/box.hpp"
#include "crowdseg/image.hpp"
#include "crowdseg/mask.hpp"
#include "crowdseg/rng.hpp"

namespace crowdseg {

enum class ShapeKind { kEllipse, kRoundedRect };

struct SceneObject {
  ShapeKind kind = ShapeKind::kEllipse;
  double cx = 0, cy = 0;   // center
  double rx = 0, ry = 0;   // half extents
  double corner = 0;       // corner radius (rounded rect only)
  int depth = 0;           // later depth occludes earlier
  BitMask full_mask;
};

/// Crowded scene: ordered opaque shapes over a textured background. The object
/// list is bottom-to-top; an object's visible mask is its full mask minus the
/// union of all deeper (higher-index) full masks.
struct SceneSpec {
  int canvas_w = 0, canvas_h = 0;
  std::uint64_t seed = 0;
  std::vector<SceneObject> objects;
};

struct GroundTruth {
  std::vector<BitMask> visible_masks;
  std::vector<BoxXYXY> visible_boxes;   // always mask_to_box of visible_masks
  std::vector<double> visibility_ratio;
  std::vector<int> source_index;        // scene object index per GT entry
  std::vector<int> dropped;             // fully occluded objects, excluded from GT
};

struct SceneParams {
  int n_objects = 22;
  double overlap_level = 0.4;  // 0 = sparse, 1 = heavily stacked
  int canvas_w = 1024, canvas_h = 1024;
  double min_radius = 60.0, max_radius = 140.0;
};

namespace detail {

inline void rasterize_ellipse(BitMask& m, double cx, double cy, double rx, double ry) {
  const int y0 = std::max(0, int(std::floor(cy - ry)));
  const int y1 = std::min(m.height() - 1, int(std::ceil(cy + ry)));
  for (int y = y0; y <= y1; ++y) {
    const double dy = (y + 0.5 - cy) / ry;
    const double t = 1.0 - dy * dy;
    if (t <= 0.0) continue;
    const double hw = rx * std::sqrt(t);
    const int x0 = int(std::ceil(cx - hw - 0.5));
    const int x1 = int(std::floor(cx + hw - 0.5));
    if (x1 >= x0) m.fill_row_span(y, x0, x1 + 1);
  }
}

inline void rasterize_rounded_rect(BitMask& m, double cx, double cy, double hw,
                                   double hh, double r) {
  const int y0 = std::max(0, int(std::floor(cy - hh)));
  const int y1 = std::min(m.height() - 1, int(std::ceil(cy + hh)));
  for (int y = y0; y <= y1; ++y) {
    const double dy = std::abs(y + 0.5 - cy);
    if (dy > hh) continue;
    double half = hw;
    if (dy > hh - r) {
      const double dc = (dy - (hh - r)) / r;
      const double t = 1.0 - dc * dc;
      if (t <= 0.0) continue;
      half = hw - r + r * std::sqrt(t);
    }
    const int x0 = int(std::ceil(cx - half - 0.5));
    const int x1 = int(std::floor(cx + half - 0.5));
    if (x1 >= x0) m.fill_row_span(y, x0, x1 + 1);
  }
}

inline BitMask rasterize(const SceneObject& o, int w, int h) {
  BitMask m(w, h);
  if (o.kind == ShapeKind::kEllipse)
    rasterize_ellipse(m, o.cx, o.cy, o.rx, o.ry);
  else
    rasterize_rounded_rect(m, o.cx, o.cy, o.rx, o.ry, o.corner);
  return m;
}

}  // namespace detail

inline GroundTruth derive_ground_truth(const SceneSpec& scene) {
  GroundTruth gt;
  const int n = int(scene.objects.size());
  BitMask occluders(scene.canvas_w, scene.canvas_h);
  std::vector<BitMask> visible(static_cast<std::size_t>(n));
  for (int i = n - 1; i >= 0; --i) {
    BitMask v = scene.objects[std::size_t(i)].full_mask;
    v.subtract(occluders);
    occluders.or_with(scene.objects[std::size_t(i)].full_mask);
    visible[std::size_t(i)] = std::move(v);
  }
  for (int i = 0; i < n; ++i) {
    auto box = mask_to_box(visible[std::size_t(i)]);
    if (!box) {
      gt.dropped.push_back(i);
      continue;
    }
    const double full = double(scene.objects[std::size_t(i)].full_mask.count());
    gt.visibility_ratio.push_back(double(visible[std::size_t(i)].count()) / full);
    gt.visible_boxes.push_back(*box);
    gt.visible_masks.push_back(std::move(visible[std::size_t(i)]));
    gt.source_index.push_back(i);
  }
  return gt;
}

// Deterministic in seed. overlap_level steers how often a new object is placed
// next to an existing one and how tight that placement is, which sets the mean
// occlusion of the scene.
inline std::pair<SceneSpec, GroundTruth> generate_scene(const SceneParams& params,
                                                        std::uint64_t seed) {
  if (params.n_objects < 0) throw std::invalid_argument("generate_scene: n_objects < 0");
  SceneSpec scene;
  scene.canvas_w = params.canvas_w;
  scene.canvas_h = params.canvas_h;
  scene.seed = seed;
  Rng rng(hash_mix(seed, 0x5ce11eull));
  const double closeness = 1.35 - 1.1 * params.overlap_level;
  for (int i = 0; i < params.n_objects; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
      SceneObject o;
      o.depth = i;
      o.kind = rng.uniform() < 0.5 ? ShapeKind::kEllipse : ShapeKind::kRoundedRect;
      o.rx = rng.uniform(params.min_radius, params.max_radius);
      o.ry = o.rx * rng.uniform(0.85, 1.35);
      o.corner = 0.35 * std::min(o.rx, o.ry);
      const bool near_existing = i > 0 && rng.uniform() < params.overlap_level + 0.2;
      if (near_existing) {
        const auto& anchor = scene.objects[rng.uniform_index(scene.objects.size())];
        const double d = (std::max(anchor.rx, anchor.ry) + std::max(o.rx, o.ry)) *
                         rng.uniform(closeness * 0.6, closeness);
        const double a = rng.uniform(0.0, 6.283185307179586);
        o.cx = anchor.cx + d * std::cos(a);
        o.cy = anchor.cy + d * std::sin(a);
      } else {
        o.cx = rng.uniform(o.rx, params.canvas_w - o.rx);
        o.cy = rng.uniform(o.ry, params.canvas_h - o.ry);
      }
      if (o.cx - o.rx < -0.25 * o.rx || o.cx + o.rx > params.canvas_w + 0.25 * o.rx ||
          o.cy - o.ry < -0.25 * o.ry || o.cy + o.ry > params.canvas_h + 0.25 * o.ry)
        continue;  // mostly outside the canvas, retry
      o.full_mask = detail::rasterize(o, params.canvas_w, params.canvas_h);
      if (o.full_mask.empty_mask()) continue;
      scene.objects.push_back(std::move(o));
      placed = true;
    }
    if (!placed)
      throw std::runtime_error("generate_scene: canvas too small to place object after retries");
  }
  GroundTruth gt = derive_ground_truth(scene);
  return {std::move(scene), std::move(gt)};
}

inline std::pair<SceneSpec, GroundTruth> generate_scene(int n_objects, double overlap_level,
                                                        int canvas_w, int canvas_h,
                                                        std::uint64_t seed) {
  SceneParams p;
  p.n_objects = n_objects;
  p.overlap_level = overlap_level;
  p.canvas_w = canvas_w;
  p.canvas_h = canvas_h;
  return generate_scene(p, seed);
}

// Flat-shaded shapes over a block-textured background; byte-deterministic in
// the scene seed. Painting bottom-to-top reproduces exactly the visible masks.
inline Image render(const SceneSpec& scene) {
  Image img(scene.canvas_w, scene.canvas_h);
  for (int y = 0; y < scene.canvas_h; ++y) {
    for (int x = 0; x < scene.canvas_w; ++x) {
      const std::uint64_t block = hash_mix(scene.seed, std::uint64_t(y / 16) << 24 | std::uint64_t(x / 16));
      const std::uint64_t dither = hash_mix(scene.seed ^ 0xd17e9ull, std::uint64_t(y) << 20 | std::uint64_t(x));
      std::uint8_t* p = img.px(x, y);
      for (int c = 0; c < 3; ++c) {
        const int base = 70 + int((block >> (8 * c)) & 0x1f);
        const int d = int((dither >> (8 * c)) & 0x07);
        p[c] = std::uint8_t(base + d);
      }
    }
  }
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const auto& o = scene.objects[i];
    const std::uint64_t ch = hash_mix(scene.seed ^ 0xc0104ull, std::uint64_t(i));
    const std::uint8_t r = std::uint8_t(150 + (ch & 0x5f));
    const std::uint8_t g = std::uint8_t(150 + ((ch >> 8) & 0x5f));
    const std::uint8_t b = std::uint8_t(150 + ((ch >> 16) & 0x5f));
    const auto box = mask_to_box(o.full_mask);
    if (!box) continue;
    for (int y = int(box->y1); y < int(box->y2); ++y)
      for (int x = int(box->x1); x < int(box->x2); ++x)
        if (o.full_mask.get(x, y)) {
          std::uint8_t* p = img.px(x, y);
          p[0] = r; p[1] = g; p[2] = b;
        }
  }
  return img;
}

// Visible-owner label map: value = GT entry index owning the pixel, -1 for
// background. Visible masks are disjoint so ownership is unambiguous.
inline std::vector<std::int16_t> owner_map(const GroundTruth& gt, int w, int h) {
  std::vector<std::int16_t> owners(std::size_t(w) * h, -1);
  for (std::size_t k = 0; k < gt.visible_masks.size(); ++k) {
    const BitMask& m = gt.visible_masks[k];
    const auto& b = gt.visible_boxes[k];
    for (int y = int(b.y1); y < int(b.y2); ++y)
      for (int x = int(b.x1); x < int(b.x2); ++x)
        if (m.get(x, y)) owners[std::size_t(y) * w + x] = std::int16_t(k);
  }
  return owners;
}

}  // namespace crowdseg
