#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "deltaflux/error.hpp"
#include "deltaflux/model.hpp"
#include "deltaflux/tensor_io.hpp"

namespace deltaflux {

// splitmix64 (Steele, Lea, Flood). Also used to seed the synthetic video noise.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform in [-bound, bound].
  float symmetric(double bound) { return static_cast<float>((2.0 * uniform() - 1.0) * bound); }

 private:
  std::uint64_t state_;
};

inline double glorot_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

// Deterministic parameters: one splitmix64 stream walked in layer order.
//   conv:   W ~ U[-b, b], b = sqrt(6 / (c_i*k_h*k_w + c_o*k_h*k_w)); bias ~ U[-0.1, 0.1]
//   linear: W ~ U[-b, b], b = sqrt(6 / (n_in + n_out));            bias ~ U[-0.1, 0.1]
//   affine: scale ~ U[0.5, 1.5], shift ~ U[-0.1, 0.1]
inline ModelGraph init_weights(ModelGraph g, std::uint64_t seed) {
  SplitMix64 rng(seed);
  for (std::size_t i = 0; i < g.size(); ++i) {
    LayerSpec& l = g.layer(i);
    switch (l.kind) {
      case LayerKind::conv2d: {
        const std::size_t k = l.window.kh * l.window.kw;
        const double b = glorot_bound(l.in.c * k, l.out.c * k);
        for (auto& v : l.weights) v = rng.symmetric(b);
        for (auto& v : l.bias) v = rng.symmetric(0.1);
        break;
      }
      case LayerKind::linear: {
        const double b = glorot_bound(l.in.c, l.out.c);
        for (auto& v : l.weights) v = rng.symmetric(b);
        for (auto& v : l.bias) v = rng.symmetric(0.1);
        break;
      }
      case LayerKind::affine:
        for (auto& v : l.weights) v = static_cast<float>(0.5 + rng.uniform());
        for (auto& v : l.bias) v = rng.symmetric(0.1);
        break;
      default:
        break;
    }
  }
  return g;
}

namespace detail {

enum class WeightTag : std::uint32_t { conv2d = 1, affine = 2, linear = 3 };

inline WeightTag weight_tag(LayerKind k) {
  switch (k) {
    case LayerKind::conv2d: return WeightTag::conv2d;
    case LayerKind::affine: return WeightTag::affine;
    default: return WeightTag::linear;
  }
}

inline std::vector<std::uint32_t> weight_dims(const LayerSpec& l) {
  switch (l.kind) {
    case LayerKind::conv2d:
      return {static_cast<std::uint32_t>(l.out.c), static_cast<std::uint32_t>(l.in.c),
              static_cast<std::uint32_t>(l.window.kh), static_cast<std::uint32_t>(l.window.kw)};
    case LayerKind::linear:
      return {static_cast<std::uint32_t>(l.out.c), static_cast<std::uint32_t>(l.in.c)};
    default:
      return {static_cast<std::uint32_t>(l.in.c)};
  }
}

}  // namespace detail

// ".dfw": "DFW1", u32 weighted-layer count, then per weighted layer:
//   u32 kind tag (1 conv, 2 affine, 3 linear), u32 layer index, u32 rank, u32 dims[rank],
//   f32 weights (or affine scale), f32 bias (or affine shift); all little-endian.
inline std::vector<std::uint8_t> encode_weights(const ModelGraph& g) {
  std::vector<std::uint8_t> out{'D', 'F', 'W', '1'};
  std::uint32_t count = 0;
  for (const auto& l : g.layers()) count += l.has_weights() ? 1 : 0;
  detail::put_u32(out, count);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const LayerSpec& l = g.layer(i);
    if (!l.has_weights()) continue;
    detail::put_u32(out, static_cast<std::uint32_t>(detail::weight_tag(l.kind)));
    detail::put_u32(out, static_cast<std::uint32_t>(i));
    const auto dims = detail::weight_dims(l);
    detail::put_u32(out, static_cast<std::uint32_t>(dims.size()));
    for (auto d : dims) detail::put_u32(out, d);
    for (float v : l.weights) detail::put_f32(out, v);
    for (float v : l.bias) detail::put_f32(out, v);
  }
  return out;
}

inline ModelGraph decode_weights(ModelGraph g, const std::vector<std::uint8_t>& bytes,
                                 const std::string& source = "<memory>") {
  detail::ByteReader rd(bytes, source);
  rd.expect_magic("DFW1");
  std::uint32_t expected = 0;
  for (const auto& l : g.layers()) expected += l.has_weights() ? 1 : 0;
  const std::uint32_t count = rd.u32();
  if (count != expected) {
    throw ShapeError(source + ": holds " + std::to_string(count) + " weighted layers, model has " +
                     std::to_string(expected));
  }
  for (std::uint32_t n = 0; n < count; ++n) {
    const auto tag = rd.u32();
    const auto index = rd.u32();
    if (index >= g.size() || !g.layer(index).has_weights()) {
      throw ShapeError(source + ": record " + std::to_string(n) + " names layer " + std::to_string(index) +
                       ", which has no weights");
    }
    LayerSpec& l = g.layer(index);
    if (tag != static_cast<std::uint32_t>(detail::weight_tag(l.kind))) {
      throw ShapeError(source + ": kind tag " + std::to_string(tag) + " does not match " + describe(l, index));
    }
    const auto want = detail::weight_dims(l);
    const auto rank = rd.u32();
    if (rank > 8) throw IoError(source + ": implausible rank " + std::to_string(rank));
    std::vector<std::uint32_t> got(rank);
    for (auto& d : got) d = rd.u32();
    if (got != want) {
      auto fmt = [](const std::vector<std::uint32_t>& v) {
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "x" : "") + std::to_string(v[i]);
        return s;
      };
      throw ShapeError(source + ": " + describe(l, index) + " expects weights " + fmt(want) + ", file has " +
                       fmt(got));
    }
    rd.f32s(l.weights);
    rd.f32s(l.bias);
  }
  if (!rd.at_end()) throw IoError(source + ": trailing bytes after weights");
  return g;
}

inline void save_weights(const ModelGraph& g, const std::filesystem::path& path) {
  detail::write_file(path, encode_weights(g));
}

inline ModelGraph load_weights(const ModelGraph& g, const std::filesystem::path& path) {
  return decode_weights(g, detail::read_file(path), path.string());
}

}  // namespace deltaflux
