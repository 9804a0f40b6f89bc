#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "crowdseg/box.hpp"

namespace crowdseg {

/// Binary raster, row-major, bit-packed (64 pixels per word, rows padded to a
/// word boundary; padding bits are kept zero so word-wise set ops are exact).
class BitMask {
 public:
  BitMask() = default;
  BitMask(int width, int height)
      : width_(width), height_(height), wpr_((width + 63) / 64),
        words_(std::size_t(wpr_) * std::size_t(height), 0ull) {
    if (width < 0 || height < 0) throw std::invalid_argument("BitMask: negative dims");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return std::size_t(width_) * std::size_t(height_); }
  bool same_dims(const BitMask& o) const { return width_ == o.width_ && height_ == o.height_; }

  bool get(int x, int y) const {
    return (words_[std::size_t(y) * wpr_ + std::size_t(x >> 6)] >> (x & 63)) & 1ull;
  }
  void set(int x, int y, bool v) {
    std::uint64_t& w = words_[std::size_t(y) * wpr_ + std::size_t(x >> 6)];
    const std::uint64_t bit = 1ull << (x & 63);
    if (v) w |= bit; else w &= ~bit;
  }

  // Sets [x0, x1) in row y.
  void fill_row_span(int y, int x0, int x1) {
    x0 = std::max(x0, 0);
    x1 = std::min(x1, width_);
    if (x0 >= x1) return;
    std::uint64_t* row = &words_[std::size_t(y) * wpr_];
    const int w0 = x0 >> 6, w1 = (x1 - 1) >> 6;
    const std::uint64_t first = ~0ull << (x0 & 63);
    const std::uint64_t last = (~0ull) >> (63 - ((x1 - 1) & 63));
    if (w0 == w1) {
      row[w0] |= first & last;
    } else {
      row[w0] |= first;
      for (int w = w0 + 1; w < w1; ++w) row[w] = ~0ull;
      row[w1] |= last;
    }
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (std::uint64_t w : words_) n += std::size_t(std::popcount(w));
    return n;
  }
  bool empty_mask() const {
    for (std::uint64_t w : words_) if (w) return false;
    return true;
  }

  void or_with(const BitMask& o) {
    check_dims(o);
    for (std::size_t i = 0; i < words_.size(); ++i) words_[i] |= o.words_[i];
  }
  void and_with(const BitMask& o) {
    check_dims(o);
    for (std::size_t i = 0; i < words_.size(); ++i) words_[i] &= o.words_[i];
  }
  void subtract(const BitMask& o) {
    check_dims(o);
    for (std::size_t i = 0; i < words_.size(); ++i) words_[i] &= ~o.words_[i];
  }

  std::size_t intersection_count(const BitMask& o) const {
    check_dims(o);
    std::size_t n = 0;
    for (std::size_t i = 0; i < words_.size(); ++i)
      n += std::size_t(std::popcount(words_[i] & o.words_[i]));
    return n;
  }
  std::size_t union_count(const BitMask& o) const {
    check_dims(o);
    std::size_t n = 0;
    for (std::size_t i = 0; i < words_.size(); ++i)
      n += std::size_t(std::popcount(words_[i] | o.words_[i]));
    return n;
  }

  bool operator==(const BitMask& o) const {
    return width_ == o.width_ && height_ == o.height_ && words_ == o.words_;
  }

  const std::vector<std::uint64_t>& words() const { return words_; }
  int words_per_row() const { return wpr_; }

 private:
  void check_dims(const BitMask& o) const {
    if (!same_dims(o)) throw std::invalid_argument("BitMask: dimension mismatch");
  }
  int width_ = 0, height_ = 0, wpr_ = 0;
  std::vector<std::uint64_t> words_;
};

/// Real-valued raster in [0,1], or unbounded logits when is_logit is set.
struct SoftMask {
  int width = 0, height = 0;
  bool is_logit = false;
  std::vector<double> data;  // row-major, width*height

  SoftMask() = default;
  SoftMask(int w, int h, double fill = 0.0, bool logit = false)
      : width(w), height(h), is_logit(logit), data(std::size_t(w) * std::size_t(h), fill) {}

  double at(int x, int y) const { return data[std::size_t(y) * width + x]; }
  double& at(int x, int y) { return data[std::size_t(y) * width + x]; }
};

/// Grid-derived candidate location in absolute pixel coordinates.
struct PointPrompt {
  double x = 0.0, y = 0.0;
  int grid_index = -1;
  double heat = 0.0;
};

using PromptSet = std::vector<PointPrompt>;

// |a&b| / |a|b|; empty vs empty is 1.0 (two empty predictions agree).
inline double iou_masks(const BitMask& a, const BitMask& b) {
  const std::size_t uni = a.union_count(b);
  if (uni == 0) return 1.0;
  return double(a.intersection_count(b)) / double(uni);
}

// Tight bounds of nonzero pixels, exclusive max convention; none when empty.
inline std::optional<BoxXYXY> mask_to_box(const BitMask& m) {
  int min_x = m.width(), max_x = -1, min_y = m.height(), max_y = -1;
  for (int y = 0; y < m.height(); ++y) {
    const std::uint64_t* row = m.words().data() + std::size_t(y) * m.words_per_row();
    int row_min = -1, row_max = -1;
    for (int w = 0; w < m.words_per_row(); ++w) {
      if (!row[w]) continue;
      if (row_min < 0) row_min = w * 64 + std::countr_zero(row[w]);
      row_max = w * 64 + 63 - std::countl_zero(row[w]);
    }
    if (row_min < 0) continue;
    min_y = std::min(min_y, y);
    max_y = y;
    min_x = std::min(min_x, row_min);
    max_x = std::max(max_x, row_max);
  }
  if (max_x < 0) return std::nullopt;
  return BoxXYXY{double(min_x), double(min_y), double(max_x + 1), double(max_y + 1)};
}

// Raster-cell membership test; (x,y) must already be in the mask's coordinate
// frame (callers scale before calling).
inline bool point_in_mask(const PointPrompt& p, const BitMask& m) {
  const int cx = int(std::floor(p.x));
  const int cy = int(std::floor(p.y));
  if (cx < 0 || cy < 0 || cx >= m.width() || cy >= m.height())
    throw std::out_of_range("point_in_mask: point outside mask canvas");
  return m.get(cx, cy);
}

enum class ResizeMode { kNearest, kBilinear };

namespace detail {

// Align-corners-false source coordinate of output index i.
inline double src_coord(int i, int out_n, int in_n) {
  return (double(i) + 0.5) * double(in_n) / double(out_n) - 0.5;
}

struct Tap {
  int lo = 0, hi = 0;
  double w_hi = 0.0;  // weight of hi; lo gets 1 - w_hi
};

inline std::vector<Tap> make_taps(int out_n, int in_n) {
  std::vector<Tap> taps(static_cast<std::size_t>(out_n));
  for (int i = 0; i < out_n; ++i) {
    const double s = src_coord(i, out_n, in_n);
    double f = std::floor(s);
    int lo = int(f);
    double w = s - f;
    if (lo < 0) { lo = 0; w = 0.0; }
    if (lo >= in_n - 1) { lo = in_n - 1; w = 0.0; }
    taps[std::size_t(i)] = {lo, std::min(lo + 1, in_n - 1), w};
  }
  return taps;
}

}  // namespace detail

// Bilinear (align-corners-false) or nearest resampling. Identity sizes return
// the input bit-identically.
inline SoftMask resize_mask(const SoftMask& m, int out_w, int out_h, ResizeMode mode) {
  if (out_w <= 0 || out_h <= 0) throw std::invalid_argument("resize_mask: nonpositive dims");
  if (out_w == m.width && out_h == m.height) return m;
  SoftMask out(out_w, out_h, 0.0, m.is_logit);
  if (mode == ResizeMode::kNearest) {
    for (int y = 0; y < out_h; ++y) {
      const int sy = std::clamp(int(std::floor((y + 0.5) * double(m.height) / out_h)), 0, m.height - 1);
      for (int x = 0; x < out_w; ++x) {
        const int sx = std::clamp(int(std::floor((x + 0.5) * double(m.width) / out_w)), 0, m.width - 1);
        out.at(x, y) = m.at(sx, sy);
      }
    }
    return out;
  }
  const auto tx = detail::make_taps(out_w, m.width);
  const auto ty = detail::make_taps(out_h, m.height);
  for (int y = 0; y < out_h; ++y) {
    const auto& t_y = ty[std::size_t(y)];
    for (int x = 0; x < out_w; ++x) {
      const auto& t_x = tx[std::size_t(x)];
      const double v00 = m.at(t_x.lo, t_y.lo), v10 = m.at(t_x.hi, t_y.lo);
      const double v01 = m.at(t_x.lo, t_y.hi), v11 = m.at(t_x.hi, t_y.hi);
      const double top = v00 * (1.0 - t_x.w_hi) + v10 * t_x.w_hi;
      const double bot = v01 * (1.0 - t_x.w_hi) + v11 * t_x.w_hi;
      out.at(x, y) = top * (1.0 - t_y.w_hi) + bot * t_y.w_hi;
    }
  }
  return out;
}

// Adjoint of bilinear resize_mask: scatters d(out) back onto a grid of the
// input's dims. Needed by the dice-loss path (loss at 256x256, heads at grid res).
inline SoftMask resize_bilinear_backward(const SoftMask& grad_out, int in_w, int in_h) {
  SoftMask grad_in(in_w, in_h, 0.0, true);
  if (grad_out.width == in_w && grad_out.height == in_h) {
    grad_in.data = grad_out.data;
    return grad_in;
  }
  const auto tx = detail::make_taps(grad_out.width, in_w);
  const auto ty = detail::make_taps(grad_out.height, in_h);
  for (int y = 0; y < grad_out.height; ++y) {
    const auto& t_y = ty[std::size_t(y)];
    for (int x = 0; x < grad_out.width; ++x) {
      const auto& t_x = tx[std::size_t(x)];
      const double g = grad_out.at(x, y);
      grad_in.at(t_x.lo, t_y.lo) += g * (1.0 - t_x.w_hi) * (1.0 - t_y.w_hi);
      grad_in.at(t_x.hi, t_y.lo) += g * t_x.w_hi * (1.0 - t_y.w_hi);
      grad_in.at(t_x.lo, t_y.hi) += g * (1.0 - t_x.w_hi) * t_y.w_hi;
      grad_in.at(t_x.hi, t_y.hi) += g * t_x.w_hi * t_y.w_hi;
    }
  }
  return grad_in;
}

// Bilinear sample of a raster that spans a canvas_w x canvas_h image, at
// absolute canvas coordinates.
inline double sample_canvas_bilinear(const SoftMask& m, double x, double y,
                                     double canvas_w, double canvas_h) {
  const double u = x / canvas_w * m.width - 0.5;
  const double v = y / canvas_h * m.height - 0.5;
  const int x0 = std::clamp(int(std::floor(u)), 0, m.width - 1);
  const int y0 = std::clamp(int(std::floor(v)), 0, m.height - 1);
  const int x1 = std::min(x0 + 1, m.width - 1);
  const int y1 = std::min(y0 + 1, m.height - 1);
  const double fx = std::clamp(u - x0, 0.0, 1.0);
  const double fy = std::clamp(v - y0, 0.0, 1.0);
  const double top = m.at(x0, y0) * (1.0 - fx) + m.at(x1, y0) * fx;
  const double bot = m.at(x0, y1) * (1.0 - fx) + m.at(x1, y1) * fx;
  return top * (1.0 - fy) + bot * fy;
}

inline BitMask resize_bitmask_nearest(const BitMask& m, int out_w, int out_h) {
  if (out_w == m.width() && out_h == m.height()) return m;
  BitMask out(out_w, out_h);
  for (int y = 0; y < out_h; ++y) {
    const int sy = std::clamp(int(std::floor((y + 0.5) * double(m.height()) / out_h)), 0, m.height() - 1);
    for (int x = 0; x < out_w; ++x) {
      const int sx = std::clamp(int(std::floor((x + 0.5) * double(m.width()) / out_w)), 0, m.width() - 1);
      if (m.get(sx, sy)) out.set(x, y, true);
    }
  }
  return out;
}

inline BitMask binarize(const SoftMask& m, double threshold) {
  BitMask out(m.width, m.height);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      if (m.at(x, y) > threshold) out.set(x, y, true);
  return out;
}

}  // namespace crowdseg
