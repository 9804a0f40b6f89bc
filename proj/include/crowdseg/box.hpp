#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace crowdseg {

/// Axis-aligned box, half-open pixel convention [x1,x2) x [y1,y2).
struct BoxXYXY {
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }

  bool valid() const {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) &&
           std::isfinite(y2) && x1 <= x2 && y1 <= y2;
  }
};

inline BoxXYXY box_from_xywh(double x, double y, double w, double h) {
  return {x, y, x + w, y + h};
}

inline double intersection_area(const BoxXYXY& a, const BoxXYXY& b) {
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  if (w <= 0.0) return 0.0;
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (h <= 0.0) return 0.0;
  return w * h;
}

// Intersection over union; 0 when the union is empty.
inline double iou_boxes(const BoxXYXY& a, const BoxXYXY& b) {
  if (!a.valid() || !b.valid()) throw std::invalid_argument("iou_boxes: invalid box");
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

inline BoxXYXY translate(const BoxXYXY& b, double dx, double dy) {
  return {b.x1 + dx, b.y1 + dy, b.x2 + dx, b.y2 + dy};
}

inline BoxXYXY scale(const BoxXYXY& b, double sx, double sy) {
  return {b.x1 * sx, b.y1 * sy, b.x2 * sx, b.y2 * sy};
}

}  // namespace crowdseg
