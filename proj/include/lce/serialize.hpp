#pragma once

// On-disk formats, both little-endian regardless of host:
//   .lcet — one tensor: "LCET", u32 rank, u32 extents..., f32 payload.
//   .lcec — checkpoint: "LCEC", u32 version, u64 config digest, u32 count,
//           then a table of (name, shape, u64 float-offset), then one flat
//           f32 payload blob. Reload is bit-exact.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "lce/core.hpp"
#include "lce/tensor.hpp"

namespace lce {

namespace wire {

inline void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(char(v & 0xff));
  out.push_back(char((v >> 8) & 0xff));
  out.push_back(char((v >> 16) & 0xff));
  out.push_back(char((v >> 24) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  put_u32(out, std::uint32_t(v & 0xffffffffull));
  put_u32(out, std::uint32_t(v >> 32));
}

inline void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

class Reader {
 public:
  Reader(const std::string& buf, std::string origin)
      : buf_(buf), origin_(std::move(origin)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | std::uint8_t(buf_[pos_ + size_t(i)]);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    const std::uint64_t lo = u32();
    const std::uint64_t hi = u32();
    return lo | (hi << 32);
  }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == buf_.size(); }
  size_t pos() const { return pos_; }

 private:
  void need(size_t n) const {
    if (pos_ + n > buf_.size())
      throw IoError("truncated file " + origin_ + " (need " + std::to_string(n) +
                    " bytes at offset " + std::to_string(pos_) + ")");
  }
  const std::string& buf_;
  std::string origin_;
  size_t pos_ = 0;
};

inline std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void spit(const std::string& path, const std::string& data) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f.write(data.data(), std::streamsize(data.size()));
  if (!f) throw IoError("failed writing " + path);
}

}  // namespace wire

inline void write_lcet(const std::string& path, const Tensor& t) {
  std::string out;
  out += "LCET";
  wire::put_u32(out, std::uint32_t(t.rank()));
  for (index_t d = 0; d < t.rank(); ++d) wire::put_u32(out, std::uint32_t(t.dim(d)));
  for (index_t i = 0; i < t.numel(); ++i) wire::put_f32(out, t[i]);
  wire::spit(path, out);
}

inline Tensor read_lcet(const std::string& path) {
  const std::string buf = wire::slurp(path);
  wire::Reader r(buf, path);
  if (r.bytes(4) != "LCET") throw IoError(path + ": bad magic, not a tensor file");
  const std::uint32_t rank = r.u32();
  if (rank > 8) throw IoError(path + ": implausible rank " + std::to_string(rank));
  Shape shape;
  for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(index_t(r.u32()));
  Tensor t{shape};
  for (index_t i = 0; i < t.numel(); ++i) t[i] = r.f32();
  if (!r.done()) throw IoError(path + ": trailing bytes after payload");
  return t;
}

struct Checkpoint {
  std::uint32_t version = 1;
  std::uint64_t config_digest = 0;
  std::vector<std::pair<std::string, Tensor>> params;  // order preserved

  const Tensor& find(const std::string& name) const {
    for (const auto& [n, t] : params)
      if (n == name) return t;
    throw Error("checkpoint has no parameter named '" + name + "'");
  }
};

inline void write_lcec(const std::string& path, const Checkpoint& ckpt) {
  std::string table, payload_meta;
  std::uint64_t offset = 0;  // in floats
  std::string payload;
  for (const auto& [name, t] : ckpt.params) {
    wire::put_u32(table, std::uint32_t(name.size()));
    table += name;
    wire::put_u32(table, std::uint32_t(t.rank()));
    for (index_t d = 0; d < t.rank(); ++d) wire::put_u32(table, std::uint32_t(t.dim(d)));
    wire::put_u64(table, offset);
    offset += std::uint64_t(t.numel());
    for (index_t i = 0; i < t.numel(); ++i) wire::put_f32(payload, t[i]);
  }
  std::string out;
  out += "LCEC";
  wire::put_u32(out, ckpt.version);
  wire::put_u64(out, ckpt.config_digest);
  wire::put_u32(out, std::uint32_t(ckpt.params.size()));
  out += table;
  out += payload;
  wire::spit(path, out);
}

inline Checkpoint read_lcec(const std::string& path) {
  const std::string buf = wire::slurp(path);
  wire::Reader r(buf, path);
  if (r.bytes(4) != "LCEC") throw IoError(path + ": bad magic, not a checkpoint");
  Checkpoint ckpt;
  ckpt.version = r.u32();
  if (ckpt.version != 1)
    throw IoError(path + ": unsupported checkpoint version " +
                  std::to_string(ckpt.version));
  ckpt.config_digest = r.u64();
  const std::uint32_t count = r.u32();
  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset;
  };
  std::vector<Entry> entries;
  entries.reserve(count);
  std::uint64_t total = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    e.name = r.bytes(r.u32());
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw IoError(path + ": implausible rank " + std::to_string(rank));
    for (std::uint32_t d = 0; d < rank; ++d) e.shape.push_back(index_t(r.u32()));
    e.offset = r.u64();
    if (e.offset != total)
      throw IoError(path + ": non-contiguous parameter table at '" + e.name + "'");
    total += std::uint64_t(shape_numel(e.shape));
    entries.push_back(std::move(e));
  }
  for (const auto& e : entries) {
    Tensor t{e.shape};
    for (index_t i = 0; i < t.numel(); ++i) t[i] = r.f32();
    ckpt.params.emplace_back(e.name, std::move(t));
  }
  if (!r.done()) throw IoError(path + ": trailing bytes after payload");
  return ckpt;
}

}  // namespace lce
