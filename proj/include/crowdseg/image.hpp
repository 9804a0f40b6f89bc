#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "crowdseg/rng.hpp"

namespace crowdseg {

/// Interleaved RGB8 raster.
struct Image {
  int width = 0, height = 0;
  std::vector<std::uint8_t> rgb;  // 3 * width * height

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(std::size_t(3) * w * h, 0) {}

  std::uint8_t* px(int x, int y) { return &rgb[(std::size_t(y) * width + x) * 3]; }
  const std::uint8_t* px(int x, int y) const { return &rgb[(std::size_t(y) * width + x) * 3]; }

  std::uint64_t content_hash() const {
    std::uint64_t h = hash_bytes(rgb.data(), rgb.size());
    h = hash_mix(h, std::uint64_t(width));
    return hash_mix(h, std::uint64_t(height));
  }
};

/// A window into a larger annotated image. Backends consume views so that tiled
/// (multi-crop) inference can hand them crop rasters while keeping track of
/// where the crop sits in the full image.
struct ImageView {
  const Image* image = nullptr;  // the crop raster itself
  int origin_x = 0, origin_y = 0;  // placement in the full image
  int full_width = 0, full_height = 0;

  static ImageView whole(const Image& img) {
    return {&img, 0, 0, img.width, img.height};
  }
};

inline Image crop_image(const Image& src, int x0, int y0, int w, int h) {
  if (x0 < 0 || y0 < 0 || x0 + w > src.width || y0 + h > src.height)
    throw std::invalid_argument("crop_image: window outside image");
  Image out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::uint8_t* s = src.px(x0 + x, y0 + y);
      std::uint8_t* d = out.px(x, y);
      d[0] = s[0]; d[1] = s[1]; d[2] = s[2];
    }
  return out;
}

inline void write_ppm(const Image& img, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_ppm: cannot open " + path);
  f << "P6\n" << img.width << " " << img.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.rgb.data()), std::streamsize(img.rgb.size()));
  if (!f) throw std::runtime_error("write_ppm: write failed for " + path);
}

}  // namespace crowdseg
