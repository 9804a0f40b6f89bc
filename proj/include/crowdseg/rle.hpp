#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "crowdseg/mask.hpp"

namespace crowdseg {

/// Run-length mask, COCO uncompressed convention: column-major pixel order
/// (top-to-bottom, then left-to-right), alternating runs starting with zeros.
/// This layout is the bit-exact serialization contract for output files.
struct RleMask {
  int width = 0, height = 0;
  std::vector<std::uint32_t> counts;
};

inline RleMask rle_encode(const BitMask& m) {
  RleMask r;
  r.width = m.width();
  r.height = m.height();
  std::uint32_t run = 0;
  bool cur = false;  // runs start with zeros
  for (int x = 0; x < m.width(); ++x) {
    for (int y = 0; y < m.height(); ++y) {
      const bool v = m.get(x, y);
      if (v == cur) {
        ++run;
      } else {
        r.counts.push_back(run);
        cur = v;
        run = 1;
      }
    }
  }
  r.counts.push_back(run);
  return r;
}

inline BitMask rle_decode(const RleMask& r) {
  const std::uint64_t total =
      std::accumulate(r.counts.begin(), r.counts.end(), std::uint64_t(0));
  if (total != std::uint64_t(r.width) * std::uint64_t(r.height))
    throw std::invalid_argument("rle_decode: counts do not sum to width*height");
  BitMask m(r.width, r.height);
  std::uint64_t pos = 0;
  bool cur = false;
  for (std::uint32_t c : r.counts) {
    if (cur) {
      for (std::uint32_t i = 0; i < c; ++i) {
        const std::uint64_t p = pos + i;
        m.set(int(p / r.height), int(p % r.height), true);
      }
    }
    pos += c;
    cur = !cur;
  }
  return m;
}

}  // namespace crowdseg
