#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "crowdseg/box.hpp"

namespace crowdseg {

struct ScoredBox {
  BoxXYXY box;
  double score = 0.0;
};

// Greedy descending-score suppression. A box is suppressed when its IoU with an
// already-retained higher-scored box exceeds iou_threshold. Ties break toward
// the lower input index so runs are reproducible. Returns retained indices in
// descending score order.
inline std::vector<std::size_t> nms(const std::vector<ScoredBox>& dets, double iou_threshold) {
  for (const auto& d : dets)
    if (!std::isfinite(d.score)) throw std::invalid_argument("nms: non-finite score");
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].score > dets[b].score;
  });
  std::vector<std::size_t> keep;
  for (std::size_t idx : order) {
    bool suppressed = false;
    for (std::size_t k : keep) {
      if (iou_boxes(dets[idx].box, dets[k].box) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) keep.push_back(idx);
  }
  return keep;
}

}  // namespace crowdseg
