#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace crowdseg {

/// Dense rank-3 double tensor, row-major over (d0, d1, d2). Rank-2/1 uses are
/// expressed with trailing dims of 1.
struct Tensor3 {
  int d0 = 0, d1 = 0, d2 = 0;
  std::vector<double> data;

  Tensor3() = default;
  Tensor3(int a, int b, int c, double fill = 0.0)
      : d0(a), d1(b), d2(c), data(std::size_t(a) * b * c, fill) {
    if (a < 0 || b < 0 || c < 0) throw std::invalid_argument("Tensor3: negative dim");
  }

  double& at(int i, int j, int k) { return data[(std::size_t(i) * d1 + j) * d2 + k]; }
  double at(int i, int j, int k) const { return data[(std::size_t(i) * d1 + j) * d2 + k]; }

  double* row(int i, int j) { return &data[(std::size_t(i) * d1 + j) * d2]; }
  const double* row(int i, int j) const { return &data[(std::size_t(i) * d1 + j) * d2]; }

  bool finite() const {
    for (double v : data) if (!std::isfinite(v)) return false;
    return true;
  }
};

/// Patch-grid feature map, h x w cells with C channels. Carries the window the
/// features were computed over so prompt coordinates can be mapped back into
/// the full image by scene-aware backends.
struct FeatureMap {
  int h = 0, w = 0, channels = 0;
  std::vector<double> data;  // h * w * channels, row-major cells
  int window_x = 0, window_y = 0;    // crop origin in the full image
  int window_w = 0, window_h = 0;    // pixel extent the grid covers

  FeatureMap() = default;
  FeatureMap(int h_, int w_, int c)
      : h(h_), w(w_), channels(c), data(std::size_t(h_) * w_ * c, 0.0) {}

  double* cell(int row, int col) { return &data[(std::size_t(row) * w + col) * channels]; }
  const double* cell(int row, int col) const {
    return &data[(std::size_t(row) * w + col) * channels];
  }
};

inline double sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace crowdseg
