#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "deltaflux/error.hpp"

namespace deltaflux {

// Channel/height/width extents of a feature map.
struct Dims {
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t pixels() const { return h * w; }
  std::size_t values() const { return c * h * w; }

  friend bool operator==(const Dims&, const Dims&) = default;
};

inline std::string to_string(const Dims& d) {
  return std::to_string(d.c) + "x" + std::to_string(d.h) + "x" + std::to_string(d.w);
}

// C x H x W map of floats, channel-major, row-major inside a channel.
class DenseTensor {
 public:
  DenseTensor() = default;

  explicit DenseTensor(Dims dims, float fill = 0.0f)
      : dims_(dims), values_(dims.values(), fill) {
    if (dims.c == 0 || dims.h == 0 || dims.w == 0) {
      throw ShapeError("tensor dimensions must be positive, got " + to_string(dims));
    }
  }

  DenseTensor(Dims dims, std::vector<float> values) : dims_(dims), values_(std::move(values)) {
    if (dims.c == 0 || dims.h == 0 || dims.w == 0) {
      throw ShapeError("tensor dimensions must be positive, got " + to_string(dims));
    }
    if (values_.size() != dims.values()) {
      throw ShapeError("tensor " + to_string(dims) + " needs " + std::to_string(dims.values()) +
                       " values, got " + std::to_string(values_.size()));
    }
  }

  const Dims& dims() const { return dims_; }
  std::size_t channels() const { return dims_.c; }
  std::size_t height() const { return dims_.h; }
  std::size_t width() const { return dims_.w; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  float& at(std::size_t c, std::size_t y, std::size_t x) {
    return values_[(c * dims_.h + y) * dims_.w + x];
  }
  float at(std::size_t c, std::size_t y, std::size_t x) const {
    return values_[(c * dims_.h + y) * dims_.w + x];
  }

  // Contiguous plane for channel c.
  std::span<float> plane(std::size_t c) {
    return {values_.data() + c * dims_.pixels(), dims_.pixels()};
  }
  std::span<const float> plane(std::size_t c) const {
    return {values_.data() + c * dims_.pixels(), dims_.pixels()};
  }

  std::span<float> values() { return values_; }
  std::span<const float> values() const { return values_; }
  float* data() { return values_.data(); }
  const float* data() const { return values_.data(); }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](float v) { return std::isfinite(v); });
  }

 private:
  Dims dims_;
  std::vector<float> values_;
};

// One bit per spatial pixel, shared by every channel.
class PixelMask {
 public:
  PixelMask() = default;
  PixelMask(std::size_t h, std::size_t w, bool fill = false) : h_(h), w_(w), bits_(h * w, fill ? 1 : 0) {}

  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }
  std::size_t pixels() const { return bits_.size(); }

  bool test(std::size_t p) const { return bits_[p] != 0; }
  bool test(std::size_t y, std::size_t x) const { return bits_[y * w_ + x] != 0; }
  void set(std::size_t p, bool v = true) { bits_[p] = v ? 1 : 0; }
  void set(std::size_t y, std::size_t x, bool v = true) { bits_[y * w_ + x] = v ? 1 : 0; }

  std::size_t popcount() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
  }
  bool none() const { return std::none_of(bits_.begin(), bits_.end(), [](std::uint8_t b) { return b != 0; }); }

  // Fraction of pixels that are masked out.
  double sparsity() const {
    return pixels() == 0 ? 1.0 : 1.0 - static_cast<double>(popcount()) / static_cast<double>(pixels());
  }

  // Flat indices of masked pixels, ascending.
  std::vector<std::size_t> indices() const {
    std::vector<std::size_t> out;
    for (std::size_t p = 0; p < bits_.size(); ++p) {
      if (bits_[p]) out.push_back(p);
    }
    return out;
  }

  bool subset_of(const PixelMask& other) const {
    for (std::size_t p = 0; p < bits_.size(); ++p) {
      if (bits_[p] && !other.bits_[p]) return false;
    }
    return true;
  }

  friend bool operator==(const PixelMask&, const PixelMask&) = default;

 private:
  std::size_t h_ = 0;
  std::size_t w_ = 0;
  std::vector<std::uint8_t> bits_;
};

// Delta values stored dense plus the pixel mask that says where they live.
// Every channel of a masked-out pixel is exactly zero.
struct DeltaTensor {
  DenseTensor dense;
  PixelMask mask;

  DeltaTensor() = default;
  explicit DeltaTensor(Dims dims) : dense(dims), mask(dims.h, dims.w) {}
  DeltaTensor(DenseTensor d, PixelMask m) : dense(std::move(d)), mask(std::move(m)) {
    if (mask.height() != dense.height() || mask.width() != dense.width()) {
      throw ShapeError("mask " + std::to_string(mask.height()) + "x" + std::to_string(mask.width()) +
                       " does not match tensor " + to_string(dense.dims()));
    }
  }

  const Dims& dims() const { return dense.dims(); }
  double sparsity() const { return mask.sparsity(); }
};

// Kernel footprint of a sliding-window layer.
struct WindowGeometry {
  std::size_t kh = 1, kw = 1;
  std::size_t sh = 1, sw = 1;
  std::size_t ph = 0, pw = 0;

  friend bool operator==(const WindowGeometry&, const WindowGeometry&) = default;

  // Output extent, or ShapeError when the window does not fit.
  std::size_t out_h(std::size_t h) const { return extent(h, kh, sh, ph); }
  std::size_t out_w(std::size_t w) const { return extent(w, kw, sw, pw); }

 private:
  static std::size_t extent(std::size_t n, std::size_t k, std::size_t s, std::size_t p) {
    if (k == 0 || s == 0) throw ShapeError("kernel and stride must be positive");
    if (n + 2 * p < k) {
      throw ShapeError("window " + std::to_string(k) + " exceeds padded extent " + std::to_string(n + 2 * p));
    }
    return (n + 2 * p - k) / s + 1;
  }
};

inline void check_same_shape(const PixelMask& a, const PixelMask& b, const char* what) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw ShapeError(std::string(what) + ": mask " + std::to_string(a.height()) + "x" + std::to_string(a.width()) +
                     " vs " + std::to_string(b.height()) + "x" + std::to_string(b.width()));
  }
}

inline void check_same_shape(const Dims& a, const Dims& b, const char* what) {
  if (a != b) throw ShapeError(std::string(what) + ": " + to_string(a) + " vs " + to_string(b));
}

inline PixelMask mask_union(const PixelMask& a, const PixelMask& b) {
  check_same_shape(a, b, "mask_union");
  PixelMask out(a.height(), a.width());
  for (std::size_t p = 0; p < a.pixels(); ++p) out.set(p, a.test(p) || b.test(p));
  return out;
}

// Output pixel (i, j) is set iff its receptive field under `g` covers a set input pixel.
inline PixelMask mask_dilate(const PixelMask& m, const WindowGeometry& g, std::size_t out_h, std::size_t out_w) {
  if (g.out_h(m.height()) != out_h || g.out_w(m.width()) != out_w) {
    throw ShapeError("mask_dilate: output " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                     " inconsistent with geometry (expected " + std::to_string(g.out_h(m.height())) + "x" +
                     std::to_string(g.out_w(m.width())) + ")");
  }
  PixelMask out(out_h, out_w);
  // Outputs i whose window [i*s - p, i*s - p + k - 1] contains input row y.
  auto range = [](std::size_t y, std::size_t k, std::size_t s, std::size_t p, std::size_t n_out) {
    const long yp = static_cast<long>(y + p);
    const long lo_num = yp - static_cast<long>(k) + 1;
    long lo = lo_num <= 0 ? 0 : (lo_num + static_cast<long>(s) - 1) / static_cast<long>(s);
    long hi = yp / static_cast<long>(s);
    hi = std::min(hi, static_cast<long>(n_out) - 1);
    return std::pair<long, long>{lo, hi};
  };
  for (std::size_t y = 0; y < m.height(); ++y) {
    const auto [i0, i1] = range(y, g.kh, g.sh, g.ph, out_h);
    if (i0 > i1) continue;
    for (std::size_t x = 0; x < m.width(); ++x) {
      if (!m.test(y, x)) continue;
      const auto [j0, j1] = range(x, g.kw, g.sw, g.pw, out_w);
      for (long i = i0; i <= i1; ++i) {
        for (long j = j0; j <= j1; ++j) out.set(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
      }
    }
  }
  return out;
}

// Re-establishes the delta invariant: every channel of an unmasked pixel becomes zero.
inline DeltaTensor zero_outside_mask(DeltaTensor t) {
  const std::size_t hw = t.dense.dims().pixels();
  for (std::size_t c = 0; c < t.dense.channels(); ++c) {
    auto plane = t.dense.plane(c);
    for (std::size_t p = 0; p < hw; ++p) {
      if (!t.mask.test(p)) plane[p] = 0.0f;
    }
  }
  return t;
}

// True when every unmasked value is zero.
inline bool mask_invariant_holds(const DeltaTensor& t) {
  const std::size_t hw = t.dense.dims().pixels();
  for (std::size_t c = 0; c < t.dense.channels(); ++c) {
    auto plane = t.dense.plane(c);
    for (std::size_t p = 0; p < hw; ++p) {
      if (!t.mask.test(p) && plane[p] != 0.0f) return false;
    }
  }
  return true;
}

// Largest |value| over the channels of pixel p.
inline float pixel_max_abs(const DenseTensor& t, std::size_t p) {
  float m = 0.0f;
  const std::size_t hw = t.dims().pixels();
  const float* v = t.data() + p;
  for (std::size_t c = 0; c < t.channels(); ++c) m = std::max(m, std::fabs(v[c * hw]));
  return m;
}

// Max |a - b| divided by max |b| (L-infinity error relative to the reference's range).
inline double max_relative_error(const DenseTensor& a, const DenseTensor& ref) {
  check_same_shape(a.dims(), ref.dims(), "max_relative_error");
  double num = 0.0, den = 0.0;
  auto av = a.values();
  auto rv = ref.values();
  for (std::size_t i = 0; i < av.size(); ++i) {
    num = std::max(num, std::fabs(static_cast<double>(av[i]) - static_cast<double>(rv[i])));
    den = std::max(den, std::fabs(static_cast<double>(rv[i])));
  }
  if (den < 1e-30) return num;
  return num / den;
}

}  // namespace deltaflux
