#pragma once

#include <chrono>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "crowdseg/backend.hpp"
#include "crowdseg/eps.hpp"
#include "crowdseg/heads.hpp"
#include "crowdseg/image.hpp"
#include "crowdseg/nms.hpp"
#include "crowdseg/promptgen.hpp"
#include "crowdseg/pwdnet.hpp"
#include "crowdseg/rle.hpp"

namespace crowdseg {

struct CropWindow {
  int x0 = 0, y0 = 0, w = 0, h = 0;
};

struct CropPlan {
  std::vector<CropWindow> windows;
  int overlap = 0;
};

/// Regular tiling with stride = window_size - overlap; the last row/column is
/// clamped to the image edge. A dimension not exceeding the window collapses
/// to a single position on that axis.
inline CropPlan plan_crops(int img_w, int img_h, int window_size, int overlap) {
  if (window_size <= overlap || overlap < 0)
    throw std::invalid_argument("plan_crops: need window_size > overlap >= 0");
  CropPlan plan;
  plan.overlap = overlap;
  const int stride = window_size - overlap;
  auto positions = [&](int extent) {
    std::vector<int> pos;
    const int win = std::min(window_size, extent);
    for (int p = 0;; p += stride) {
      if (p + win >= extent) {
        pos.push_back(extent - win);
        break;
      }
      pos.push_back(p);
    }
    return pos;
  };
  const auto xs = positions(img_w);
  const auto ys = positions(img_h);
  const int win_w = std::min(window_size, img_w);
  const int win_h = std::min(window_size, img_h);
  for (int y : ys)
    for (int x : xs) plan.windows.push_back(CropWindow{x, y, win_w, win_h});
  return plan;
}

struct PipelineConfig {
  int grid_single = 64;           // prompt grid for the single full-image pass
  int grid_per_crop = 32;         // prompt grid inside each crop
  double heat_threshold = 0.5;    // binarization threshold t on the heatmap
  EpsConfig eps;                  // batch, budget K, valid threshold T
  double output_threshold = 0.3;  // minimum joint score to emit a detection
  double nms_iou = 0.5;
  bool multi_crop = false;
  int crop_window = 512;
  int crop_overlap = 128;
  std::uint64_t seed = 0;
};

struct AnnotationDet {
  RleMask mask;  // full-canvas resolution
  BoxXYXY box;   // derived from the mask, canvas coordinates
  double score = 0.0;
  int crop_id = 0;
};

struct PipelineTiming {
  double heatmap_s = 0.0, sampling_s = 0.0, merge_s = 0.0, total_s = 0.0;
};

struct AnnotationResult {
  std::vector<AnnotationDet> detections;  // sorted by descending score
  PipelineTiming timing;
  int prompts_considered = 0;  // grid points passing the heat threshold
  int prompts_decoded = 0;
};

/// Full annotation of one image: per crop, heatmap -> grid prompts -> batched
/// prompt sampling with the scoring heads -> best-candidate masks above the
/// output threshold; detections are mapped back to image coordinates and
/// merged with box NMS across crops.
inline AnnotationResult annotate(const Image& img, const HeadSet& heads,
                                 const Backend& backend, const PipelineConfig& cfg) {
  using clock = std::chrono::steady_clock;
  const auto t_start = clock::now();
  auto seconds = [](clock::time_point a, clock::time_point b) {
    return std::chrono::duration<double>(b - a).count();
  };
  AnnotationResult out;
  CropPlan plan;
  if (cfg.multi_crop) {
    plan = plan_crops(img.width, img.height, cfg.crop_window, cfg.crop_overlap);
  } else {
    plan.windows.push_back(CropWindow{0, 0, img.width, img.height});
  }
  struct RawDet {
    BitMask mask;  // window resolution, window-local
    double score;
    int crop_id;
  };
  std::vector<RawDet> raw;
  for (std::size_t ci = 0; ci < plan.windows.size(); ++ci) {
    const CropWindow& cw = plan.windows[ci];
    Image cropped;
    ImageView view{nullptr, cw.x0, cw.y0, img.width, img.height};
    if (cw.x0 == 0 && cw.y0 == 0 && cw.w == img.width && cw.h == img.height) {
      view.image = &img;
    } else {
      cropped = crop_image(img, cw.x0, cw.y0, cw.w, cw.h);
      view.image = &cropped;
    }
    const auto t0 = clock::now();
    const FeatureMap feat_sam = backend.encode_image(view);
    const FeatureMap feat_dino = backend.extract_semantic_features(view);
    const AdaptedFeatures adapt = adapt_features(feat_dino, heads.adapter);
    const SoftMask heat = heatmap_from_adapted(adapt.adapted, heads.cls);
    const int grid = cfg.multi_crop ? cfg.grid_per_crop : cfg.grid_single;
    PromptSet prompts = extract_prompts(heat, grid, cfg.heat_threshold, cw.w, cw.h);
    const auto t1 = clock::now();
    out.timing.heatmap_s += seconds(t0, t1);
    out.prompts_considered += int(prompts.size());
    if (prompts.empty()) continue;
    EpsConfig eps_cfg = cfg.eps;
    eps_cfg.seed = hash_mix(cfg.seed, std::uint64_t(ci));
    PromptScorer scorer = [&](const DecodeResult& dec) {
      const IouScores iou = refine_iou(dec, heads.par);
      const SemanticScores sem = semantic_score(dec, adapt.adapted, heads.cls);
      return select_best(joint_score(iou.s, sem.s_cls), dec.n);
    };
    EpsResult eps = eps_sample(feat_sam, prompts, scorer, backend, eps_cfg);
    out.prompts_decoded += int(eps.decoded.size());
    out.timing.sampling_s += seconds(t1, clock::now());
    for (auto& dp : eps.decoded) {
      if (dp.score < cfg.output_threshold || dp.best_mask.empty_mask()) continue;
      raw.push_back(RawDet{resize_bitmask_nearest(dp.best_mask, cw.w, cw.h), dp.score,
                           int(ci)});
    }
  }
  const auto t_merge = clock::now();
  // Map to canvas coordinates and box-merge across crops.
  std::vector<ScoredBox> boxes;
  std::vector<AnnotationDet> dets;
  for (const auto& rd : raw) {
    const CropWindow& cw = plan.windows[std::size_t(rd.crop_id)];
    BitMask canvas(img.width, img.height);
    for (int y = 0; y < rd.mask.height(); ++y)
      for (int x = 0; x < rd.mask.width(); ++x)
        if (rd.mask.get(x, y)) canvas.set(cw.x0 + x, cw.y0 + y, true);
    const auto box = mask_to_box(canvas);
    if (!box) continue;
    dets.push_back(AnnotationDet{rle_encode(canvas), *box, rd.score, rd.crop_id});
    boxes.push_back(ScoredBox{*box, rd.score});
  }
  for (std::size_t keep : nms(boxes, cfg.nms_iou))
    out.detections.push_back(std::move(dets[keep]));
  out.timing.merge_s = seconds(t_merge, clock::now());
  out.timing.total_s = seconds(t_start, clock::now());
  return out;
}

}  // namespace crowdseg
