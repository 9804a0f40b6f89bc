#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "crowdseg/heads.hpp"

namespace crowdseg {

/// Versioned binary container for the trained heads.
///
/// Layout (all integers little-endian):
///   magic "CSEGCKPT" (8 bytes) | u32 version | u64 config_fingerprint |
///   u32 tensor_count | per tensor: u32 name_len, name bytes,
///   u32 rows, u32 cols, rows*cols float64 values.
/// Values are written in Parameter storage order, so identical head state
/// produces byte-identical files.
namespace ckpt {

inline constexpr char kMagic[8] = {'C', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kVersion = 1;

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

class Reader {
 public:
  Reader(const std::string& buf) : buf_(buf) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(buf_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(std::uint8_t(buf_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw std::runtime_error("checkpoint: truncated file");
  }
  const std::string& buf_;
  std::size_t pos_ = 0;
};

}  // namespace ckpt

inline std::string serialize_checkpoint(HeadSet& heads, std::uint64_t config_fingerprint) {
  std::string out;
  out.append(ckpt::kMagic, 8);
  ckpt::put_u32(out, ckpt::kVersion);
  ckpt::put_u64(out, config_fingerprint);
  const auto params = heads.params();
  ckpt::put_u32(out, std::uint32_t(params.size()));
  for (const Parameter* p : params) {
    ckpt::put_u32(out, std::uint32_t(p->name.size()));
    out.append(p->name);
    ckpt::put_u32(out, std::uint32_t(p->rows));
    ckpt::put_u32(out, std::uint32_t(p->cols));
    for (double v : p->value) ckpt::put_f64(out, v);
  }
  return out;
}

/// Loads parameter values into an already-shaped HeadSet. Throws on magic or
/// version mismatch, unknown/missing tensor names, or shape disagreement.
/// Returns the stored config fingerprint.
inline std::uint64_t deserialize_checkpoint(const std::string& buf, HeadSet& heads) {
  ckpt::Reader r(buf);
  if (r.bytes(8) != std::string(ckpt::kMagic, 8))
    throw std::runtime_error("checkpoint: bad magic (not a checkpoint file)");
  const std::uint32_t version = r.u32();
  if (version != ckpt::kVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  const std::uint64_t fingerprint = r.u64();
  const std::uint32_t count = r.u32();
  auto params = heads.params();
  if (count != params.size())
    throw std::runtime_error("checkpoint: tensor count mismatch");
  std::vector<bool> seen(params.size(), false);
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::string name = r.bytes(r.u32());
    const int rows = int(r.u32());
    const int cols = int(r.u32());
    Parameter* target = nullptr;
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i]->name == name) {
        if (seen[i]) throw std::runtime_error("checkpoint: duplicate tensor " + name);
        seen[i] = true;
        target = params[i];
        break;
      }
    }
    if (target == nullptr) throw std::runtime_error("checkpoint: unknown tensor " + name);
    if (target->rows != rows || target->cols != cols)
      throw std::runtime_error("checkpoint: shape mismatch for " + name);
    for (double& v : target->value) v = r.f64();
  }
  if (!r.done()) throw std::runtime_error("checkpoint: trailing bytes");
  return fingerprint;
}

inline void save_checkpoint(const std::string& path, HeadSet& heads,
                            std::uint64_t config_fingerprint) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open for write: " + path);
  const std::string buf = serialize_checkpoint(heads, config_fingerprint);
  f.write(buf.data(), std::streamsize(buf.size()));
  if (!f) throw std::runtime_error("checkpoint: write failed: " + path);
}

inline std::uint64_t load_checkpoint(const std::string& path, HeadSet& heads) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(buf, heads);
}

}  // namespace crowdseg
