#pragma once

// One binary container shared by encoder packs, dataset blobs and checkpoints:
//
//   magic[8] | u64 header_len | header bytes | u32 count |
//   count × (u32 name_len | name | u32 rank | u64 dims[rank] | f64 values[]) |
//   u32 crc32(all preceding bytes)
//
// All integers and doubles are little-endian. The last magic byte is the
// format version digit.

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "defo/errors.hpp"
#include "defo/numcore/tensor.hpp"

namespace defo::io {

inline std::uint32_t crc32_of(std::string_view bytes) {
  uLong c = ::crc32(0L, Z_NULL, 0);
  c = ::crc32(c, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(c);
}

class ByteWriter {
 public:
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
  void raw(std::string_view s) { buf_.append(s); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s);
  }
  std::string& bytes() { return buf_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string buf_;
};

/// Bounds-checked little-endian reader; running off the end is a truncation.
class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string context)
      : bytes_(bytes), context_(std::move(context)) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  double f64() { return std::bit_cast<double>(le(8)); }
  std::string_view raw(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string str() { return std::string(raw(u32())); }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw format_error(context_ + ": truncated file");
  }
  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::string_view bytes_;
  std::string context_;
  std::size_t pos_ = 0;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct RecordFile {
  std::string magic;  // exactly 8 bytes
  std::string header;
  std::vector<NamedTensor> tensors;

  const Tensor* find(std::string_view name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t.tensor;
    return nullptr;
  }
};

inline std::string encode(const RecordFile& file) {
  if (file.magic.size() != 8) throw format_error("record file magic must be 8 bytes");
  ByteWriter w;
  w.raw(file.magic);
  w.u64(file.header.size());
  w.raw(file.header);
  w.u32(static_cast<std::uint32_t>(file.tensors.size()));
  for (const auto& [name, t] : file.tensors) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.u64(d);
    for (double v : t.values()) w.f64(v);
  }
  const auto crc = crc32_of(w.bytes());
  w.u32(crc);
  return std::move(w.bytes());
}

namespace detail {

inline RecordFile parse_body(std::string_view body, const std::string& context) {
  ByteReader r(body, context);
  RecordFile f;
  f.magic = std::string(r.raw(8));
  const auto hlen = r.u64();
  if (hlen > r.remaining()) throw format_error(context + ": truncated file");
  f.header = std::string(r.raw(hlen));
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor nt;
    nt.name = r.str();
    const auto rank = r.u32();
    if (rank == 0 || rank > 8) throw format_error(context + ": bad rank for " + nt.name);
    shape_t shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = r.u64();
      if (d == 0 || d > (std::size_t{1} << 32)) {
        throw format_error(context + ": bad dimension for " + nt.name);
      }
      n *= d;
    }
    if (n * 8 > r.remaining()) throw format_error(context + ": truncated file");
    std::vector<double> values(n);
    for (auto& v : values) v = r.f64();
    nt.tensor = Tensor(std::move(shape), std::move(values));
    f.tensors.push_back(std::move(nt));
  }
  if (r.remaining() != 0) throw format_error(context + ": trailing bytes before checksum");
  return f;
}

}  // namespace detail

/// Decodes and verifies a container. `expected_magic` pins kind and version.
inline RecordFile decode(std::string_view bytes, std::string_view expected_magic,
                         const std::string& context) {
  if (bytes.size() < 8 + 8 + 4 + 4) throw format_error(context + ": truncated file");
  if (bytes.substr(0, 7) != expected_magic.substr(0, 7)) {
    throw format_error(context + ": not a " + std::string(expected_magic.substr(0, 7)) + " file");
  }
  if (bytes[7] != expected_magic[7]) {
    throw version_error(context + ": format version " + std::string(1, bytes[7]) +
                        ", expected " + std::string(1, expected_magic[7]));
  }
  const auto body = bytes.substr(0, bytes.size() - 4);
  ByteReader tail(bytes.substr(bytes.size() - 4), context);
  const auto stored = tail.u32();
  if (crc32_of(body) != stored) {
    // Distinguish a short file from in-place corruption where possible.
    detail::parse_body(body, context);
    throw checksum_error(context + ": checksum mismatch");
  }
  return detail::parse_body(body, context);
}

inline std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void write_bytes(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw io_error("short write to " + path.string());
}

inline void save(const std::filesystem::path& path, const RecordFile& file) {
  write_bytes(path, encode(file));
}

inline RecordFile load(const std::filesystem::path& path, std::string_view expected_magic) {
  return decode(read_bytes(path), expected_magic, path.string());
}

}  // namespace defo::io
