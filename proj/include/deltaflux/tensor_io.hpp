#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "deltaflux/error.hpp"
#include "deltaflux/tensor.hpp"

namespace deltaflux {

namespace detail {

inline void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) {
  out.resize(out.size() + 1, v);
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  const std::size_t at = out.size();
  out.resize(at + 4);
  for (std::size_t i = 0; i < 4; ++i) out[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

inline void put_f32(std::vector<std::uint8_t>& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

// Little-endian cursor over a byte buffer; throws IoError on overrun.
class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& bytes, std::string source)
      : bytes_(bytes), source_(std::move(source)) {}

  void expect_magic(const char (&magic)[5]) {
    need(4);
    if (std::memcmp(bytes_.data() + pos_, magic, 4) != 0) {
      throw IoError(source_ + ": bad magic, expected \"" + std::string(magic, 4) + "\"");
    }
    pos_ += 4;
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }

  void f32s(std::span<float> out) {
    need(out.size() * 4);
    for (auto& v : out) v = f32();
  }

  bool at_end() const { return pos_ == bytes_.size(); }
  const std::string& source() const { return source_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw IoError(source_ + ": truncated file");
  }

  const std::vector<std::uint8_t>& bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

}  // namespace detail

// ".ten": "DFT1", u32 c, h, w, then c*h*w little-endian f32 in channel-major order.
inline std::vector<std::uint8_t> encode_tensor(const DenseTensor& t) {
  std::vector<std::uint8_t> out;
  out.reserve(16 + 4 * t.size());
  for (char ch : {'D', 'F', 'T', '1'}) detail::put_u8(out, static_cast<std::uint8_t>(ch));
  detail::put_u32(out, static_cast<std::uint32_t>(t.channels()));
  detail::put_u32(out, static_cast<std::uint32_t>(t.height()));
  detail::put_u32(out, static_cast<std::uint32_t>(t.width()));
  for (float v : t.values()) detail::put_f32(out, v);
  return out;
}

inline DenseTensor decode_tensor(const std::vector<std::uint8_t>& bytes, const std::string& source = "<memory>") {
  detail::ByteReader rd(bytes, source);
  rd.expect_magic("DFT1");
  Dims d;
  d.c = rd.u32();
  d.h = rd.u32();
  d.w = rd.u32();
  if (d.c == 0 || d.h == 0 || d.w == 0) throw IoError(source + ": zero dimension in header");
  std::vector<float> values(d.values());
  rd.f32s(values);
  if (!rd.at_end()) throw IoError(source + ": trailing bytes after tensor payload");
  return DenseTensor(d, std::move(values));
}

inline void save_tensor(const DenseTensor& t, const std::filesystem::path& path) {
  detail::write_file(path, encode_tensor(t));
}

inline DenseTensor load_tensor(const std::filesystem::path& path) {
  return decode_tensor(detail::read_file(path), path.string());
}

}  // namespace deltaflux
