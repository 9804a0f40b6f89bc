#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "crowdseg/backend.hpp"
#include "crowdseg/heads.hpp"
#include "crowdseg/mask.hpp"
#include "crowdseg/tensor.hpp"

namespace crowdseg {

/// Adapter output for one feature map, with the hidden pre-activations kept so
/// gradients can be pushed back through the adapter later. `adapted` is the
/// feature tensor every downstream consumer (heatmap, semantic token) reads.
struct AdaptedFeatures {
  FeatureMap adapted;
  std::vector<double> hidden_pre;  // h*w*hidden, row-major cells
};

inline AdaptedFeatures adapt_features(const FeatureMap& raw, const AdapterHead& adapter) {
  if (raw.channels != adapter.channels())
    throw std::invalid_argument("adapt_features: channel mismatch");
  AdaptedFeatures out;
  out.adapted = raw;  // copies window fields and shape
  out.hidden_pre.resize(std::size_t(raw.h) * raw.w * adapter.hidden());
  for (int r = 0; r < raw.h; ++r)
    for (int c = 0; c < raw.w; ++c) {
      const std::size_t cell = std::size_t(r) * raw.w + c;
      adapter.forward_cell(raw.cell(r, c), out.adapted.cell(r, c),
                           &out.hidden_pre[cell * std::size_t(adapter.hidden())]);
    }
  return out;
}

/// Per-cell foreground probability from already-adapted features.
inline SoftMask heatmap_from_adapted(const FeatureMap& adapted, const ClsHead& cls) {
  if (adapted.channels != cls.channels())
    throw std::invalid_argument("heatmap: channel mismatch");
  SoftMask heat(adapted.w, adapted.h, 0.0, /*logit=*/false);
  for (int r = 0; r < adapted.h; ++r)
    for (int c = 0; c < adapted.w; ++c)
      heat.data[std::size_t(r) * adapted.w + c] = sigmoid(cls.forward(adapted.cell(r, c)));
  return heat;
}

inline SoftMask compute_heatmap(const FeatureMap& raw_feat, const AdapterHead& adapter,
                                const ClsHead& cls) {
  return heatmap_from_adapted(adapt_features(raw_feat, adapter).adapted, cls);
}

/// Union of box-prompted decodes, downsampled (nearest) to the supervision
/// resolution. `feat` must come from encode_image on the window the boxes are
/// expressed in; boxes are window-local.
inline BitMask generate_pseudo_masks(const std::vector<BoxXYXY>& gt_boxes,
                                     const Backend& backend, const FeatureMap& feat,
                                     int out_res = 256) {
  for (const auto& b : gt_boxes) {
    if (!b.valid() || b.x1 < 0 || b.y1 < 0 || b.x2 > feat.window_w || b.y2 > feat.window_h)
      throw std::invalid_argument("generate_pseudo_masks: box outside canvas");
  }
  BitMask merged(feat.window_w, feat.window_h);
  for (const auto& b : gt_boxes) merged.or_with(backend.decode_box_prompt(feat, b));
  if (merged.width() == out_res && merged.height() == out_res) return merged;
  return resize_bitmask_nearest(merged, out_res, out_res);
}

/// Smooth dice loss 1 - (2*sum(p*g)+eps)/(sum(p)+sum(g)+eps), eps = 1.
inline double dice_loss(const SoftMask& pred, const BitMask& target, double eps = 1.0) {
  if (pred.width != target.width() || pred.height != target.height())
    throw std::invalid_argument("dice_loss: dimension mismatch");
  double inter = 0.0, psum = 0.0;
  for (int y = 0; y < pred.height; ++y)
    for (int x = 0; x < pred.width; ++x) {
      const double p = pred.at(x, y);
      psum += p;
      if (target.get(x, y)) inter += p;
    }
  const double gsum = double(target.count());
  return 1.0 - (2.0 * inter + eps) / (psum + gsum + eps);
}

/// Same loss, also filling d loss / d pred (overwrites dpred).
inline double dice_loss_backward(const SoftMask& pred, const BitMask& target,
                                 std::vector<double>& dpred, double eps = 1.0) {
  if (pred.width != target.width() || pred.height != target.height())
    throw std::invalid_argument("dice_loss: dimension mismatch");
  double inter = 0.0, psum = 0.0;
  for (int y = 0; y < pred.height; ++y)
    for (int x = 0; x < pred.width; ++x) {
      const double p = pred.at(x, y);
      psum += p;
      if (target.get(x, y)) inter += p;
    }
  const double gsum = double(target.count());
  const double denom = psum + gsum + eps;
  const double num = 2.0 * inter + eps;
  dpred.assign(std::size_t(pred.width) * pred.height, 0.0);
  const double common = num / (denom * denom);
  for (int y = 0; y < pred.height; ++y)
    for (int x = 0; x < pred.width; ++x) {
      double d = common;
      if (target.get(x, y)) d -= 2.0 / denom;
      dpred[std::size_t(y) * pred.width + x] = d;
    }
  return 1.0 - num / denom;
}

/// Lays a uniform grid_n x grid_n grid of cell centers over the window and
/// keeps points whose bilinear heat sample reaches t. grid_index is row-major.
inline PromptSet extract_prompts(const SoftMask& heat, int grid_n, double t,
                                 int window_w, int window_h) {
  if (grid_n < 1) throw std::invalid_argument("extract_prompts: grid must be >= 1");
  PromptSet out;
  for (int j = 0; j < grid_n; ++j)
    for (int i = 0; i < grid_n; ++i) {
      const double x = (i + 0.5) * double(window_w) / grid_n;
      const double y = (j + 0.5) * double(window_h) / grid_n;
      const double h = sample_canvas_bilinear(heat, x, y, window_w, window_h);
      if (h >= t) out.push_back(PointPrompt{x, y, j * grid_n + i, h});
    }
  return out;
}

}  // namespace crowdseg
