#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "crowdseg/box.hpp"
#include "crowdseg/nms.hpp"

namespace crowdseg {

/// Detections and ground truth for one image.
struct ImageEval {
  std::vector<ScoredBox> dets;
  std::vector<BoxXYXY> gts;
};

/// Greedy per-image matching outcome, in the original detection indexing.
struct ImageMatch {
  std::vector<int> det_gt;       // matched GT index or -1 per detection
  std::vector<int> order;        // detection indices in processing (score-desc) order
  std::vector<bool> gt_covered;
};

/// Greedy matcher: detections in descending score order (ties by input index)
/// claim the unmatched GT of maximal IoU when that IoU reaches the threshold.
inline ImageMatch match_single(const std::vector<ScoredBox>& dets,
                               const std::vector<BoxXYXY>& gts, double iou_thr = 0.5) {
  for (const auto& d : dets)
    if (!std::isfinite(d.score)) throw std::invalid_argument("match: non-finite score");
  ImageMatch out;
  out.det_gt.assign(dets.size(), -1);
  out.gt_covered.assign(gts.size(), false);
  out.order.resize(dets.size());
  std::iota(out.order.begin(), out.order.end(), 0);
  std::stable_sort(out.order.begin(), out.order.end(),
                   [&](int a, int b) { return dets[std::size_t(a)].score > dets[std::size_t(b)].score; });
  for (int di : out.order) {
    double best = 0.0;
    int best_gt = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (out.gt_covered[g]) continue;
      const double v = iou_boxes(dets[std::size_t(di)].box, gts[g]);
      if (v > best) {
        best = v;
        best_gt = int(g);
      }
    }
    if (best_gt >= 0 && best >= iou_thr) {
      out.det_gt[std::size_t(di)] = best_gt;
      out.gt_covered[std::size_t(best_gt)] = true;
    }
  }
  return out;
}

/// All detections across images flattened in global descending-score order.
struct MatchResult {
  std::vector<double> scores;  // descending
  std::vector<bool> is_tp;
  int n_gt = 0;
  int n_images = 0;
};

inline MatchResult match(const std::vector<ImageEval>& images, double iou_thr = 0.5) {
  MatchResult out;
  out.n_images = int(images.size());
  struct Entry {
    double score;
    bool tp;
    int image, rank;
  };
  std::vector<Entry> entries;
  for (std::size_t im = 0; im < images.size(); ++im) {
    const auto& img = images[im];
    out.n_gt += int(img.gts.size());
    const ImageMatch m = match_single(img.dets, img.gts, iou_thr);
    for (std::size_t rank = 0; rank < m.order.size(); ++rank) {
      const int di = m.order[rank];
      entries.push_back(Entry{img.dets[std::size_t(di)].score, m.det_gt[std::size_t(di)] >= 0,
                              int(im), int(rank)});
    }
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.image != b.image) return a.image < b.image;
    return a.rank < b.rank;
  });
  out.scores.reserve(entries.size());
  out.is_tp.reserve(entries.size());
  for (const auto& e : entries) {
    out.scores.push_back(e.score);
    out.is_tp.push_back(e.tp);
  }
  return out;
}

/// Exact (all-point) area under the monotone precision envelope of the
/// global PR curve.
inline double average_precision(const MatchResult& m) {
  if (m.n_gt == 0 || m.scores.empty()) return 0.0;
  const std::size_t n = m.scores.size();
  std::vector<double> prec(n), rec(n);
  int tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (m.is_tp[i]) ++tp;
    prec[i] = double(tp) / double(i + 1);
    rec[i] = double(tp) / double(m.n_gt);
  }
  for (std::size_t i = n - 1; i > 0; --i) prec[i - 1] = std::max(prec[i - 1], prec[i]);
  double ap = 0.0;
  double prev_rec = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ap += (rec[i] - prev_rec) * prec[i];
    prev_rec = rec[i];
  }
  return ap;
}

/// Log-average miss rate: miss rate at 9 log-spaced false-positives-per-image
/// reference points in [1e-2, 1], each taken as the best (lowest) miss rate
/// among score thresholds whose FPPI does not exceed the point; geometric
/// mean with a 1e-6 clamp. Thresholds are swept at tie-group boundaries so an
/// operating point always corresponds to "keep every detection scoring >= t".
inline double log_average_miss_rate(const MatchResult& m) {
  if (m.n_images < 1) throw std::invalid_argument("log_average_miss_rate: need >= 1 image");
  if (m.n_gt == 0) return 0.0;
  std::vector<double> fppi{0.0}, miss{1.0};
  int tp = 0, fp = 0;
  for (std::size_t i = 0; i < m.scores.size(); ++i) {
    if (m.is_tp[i]) ++tp;
    else ++fp;
    const bool group_end = i + 1 == m.scores.size() || m.scores[i + 1] != m.scores[i];
    if (group_end) {
      fppi.push_back(double(fp) / double(m.n_images));
      miss.push_back(1.0 - double(tp) / double(m.n_gt));
    }
  }
  double log_sum = 0.0;
  for (int j = 0; j < 9; ++j) {
    const double ref = std::pow(10.0, -2.0 + 2.0 * j / 8.0);
    double best = 1.0;
    for (std::size_t i = 0; i < fppi.size(); ++i)
      if (fppi[i] <= ref) best = std::min(best, miss[i]);
    log_sum += std::log(std::max(best, 1e-6));
  }
  return std::exp(log_sum / 9.0);
}

inline double recall(const MatchResult& m) {
  if (m.n_gt == 0) return 0.0;
  int tp = 0;
  for (bool t : m.is_tp) tp += t ? 1 : 0;
  return double(tp) / double(m.n_gt);
}

struct MetricsSummary {
  double ap50 = 0.0, mr2 = 0.0, recall_v = 0.0;
  int n_images = 0, n_gt = 0, n_det = 0;
};

inline MetricsSummary evaluate(const std::vector<ImageEval>& images, double iou_thr = 0.5) {
  const MatchResult m = match(images, iou_thr);
  MetricsSummary s;
  s.ap50 = average_precision(m);
  s.mr2 = log_average_miss_rate(m);
  s.recall_v = recall(m);
  s.n_images = m.n_images;
  s.n_gt = m.n_gt;
  s.n_det = int(m.scores.size());
  return s;
}

}  // namespace crowdseg
