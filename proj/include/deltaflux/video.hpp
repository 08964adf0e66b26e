#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "deltaflux/error.hpp"
#include "deltaflux/tensor.hpp"
#include "deltaflux/tensor_io.hpp"
#include "deltaflux/weights.hpp"

namespace deltaflux {

enum class ShapeKind { rect, disc };

struct MovingShape {
  ShapeKind kind = ShapeKind::rect;
  double size = 4.0;  // rect side length or disc diameter, in pixels
  double x = 0.0, y = 0.0;    // top-left of the bounding box at frame 0
  double vx = 0.0, vy = 0.0;  // pixels per frame
  float intensity = 1.0f;
};

struct SyntheticSpec {
  Dims dims{1, 64, 64};
  std::size_t length = 16;
  std::vector<MovingShape> shapes;
  float background = 0.5f;
  double noise_sigma = 0.0;
  std::uint64_t seed = 1;
};

namespace detail {

// Position reflected into [0, span].
inline double reflect(double p, double span) {
  if (span <= 0.0) return 0.0;
  const double period = 2.0 * span;
  double m = std::fmod(p, period);
  if (m < 0.0) m += period;
  return m <= span ? m : period - m;
}

// Box-Muller over splitmix64 so sequences do not depend on the standard library's distributions.
class GaussianSource {
 public:
  explicit GaussianSource(std::uint64_t seed) : rng_(seed) {}

  double next() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = rng_.uniform();
    } while (u1 <= 0.0);
    const double u2 = rng_.uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  SplitMix64 rng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace detail

// Background, moving shapes with reflective bounds (integer-snapped), then i.i.d. Gaussian
// noise per value, clamped to [0, 1]. Deterministic in `spec.seed`.
inline std::vector<DenseTensor> generate_synthetic(const SyntheticSpec& spec) {
  if (spec.dims.c == 0 || spec.dims.h == 0 || spec.dims.w == 0) throw ConfigError("synthetic: zero dimension");
  if (spec.length == 0) throw ConfigError("synthetic: length must be >= 1");
  if (!(spec.noise_sigma >= 0.0)) throw ConfigError("synthetic: sigma must be >= 0");
  detail::GaussianSource noise(spec.seed);
  std::vector<DenseTensor> frames;
  frames.reserve(spec.length);
  const double H = static_cast<double>(spec.dims.h), W = static_cast<double>(spec.dims.w);
  for (std::size_t t = 0; t < spec.length; ++t) {
    DenseTensor f(spec.dims, spec.background);
    for (const auto& s : spec.shapes) {
      const double size = std::min({s.size, H, W});
      const double px = std::round(detail::reflect(s.x + s.vx * static_cast<double>(t), W - size));
      const double py = std::round(detail::reflect(s.y + s.vy * static_cast<double>(t), H - size));
      const auto x0 = static_cast<std::size_t>(px), y0 = static_cast<std::size_t>(py);
      const auto n = static_cast<std::size_t>(std::round(size));
      const double r = size / 2.0;
      for (std::size_t y = y0; y < std::min(spec.dims.h, y0 + n); ++y) {
        for (std::size_t x = x0; x < std::min(spec.dims.w, x0 + n); ++x) {
          if (s.kind == ShapeKind::disc) {
            const double dy = static_cast<double>(y - y0) + 0.5 - r, dx = static_cast<double>(x - x0) + 0.5 - r;
            if (dx * dx + dy * dy > r * r) continue;
          }
          for (std::size_t c = 0; c < spec.dims.c; ++c) f.at(c, y, x) = s.intensity;
        }
      }
    }
    if (spec.noise_sigma > 0.0) {
      for (auto& v : f.values()) {
        v = static_cast<float>(std::clamp(static_cast<double>(v) + spec.noise_sigma * noise.next(), 0.0, 1.0));
      }
    }
    frames.push_back(std::move(f));
  }
  return frames;
}

// Named presets used by the CLI and tests.
inline SyntheticSpec synthetic_preset(const std::string& name) {
  SyntheticSpec s;
  if (name == "default") {
    s.dims = {3, 64, 64};
    s.length = 16;
    s.noise_sigma = 0.01;
    s.shapes = {{ShapeKind::rect, 8, 6, 10, 1.0, 0.5, 0.9f}, {ShapeKind::disc, 10, 40, 30, -0.5, 1.0, 0.1f}};
  } else if (name == "static") {
    s.dims = {3, 64, 64};
    s.length = 8;
    s.shapes = {{ShapeKind::rect, 8, 20, 20, 0, 0, 0.9f}};
  } else if (name == "moving-rect") {
    s.dims = {1, 64, 64};
    s.length = 8;
    s.shapes = {{ShapeKind::rect, 4, 10, 30, 1.0, 0.0, 1.0f}};
  } else if (name == "noisy") {
    s.dims = {3, 64, 64};
    s.length = 48;
    s.noise_sigma = 0.02;
    s.shapes = {{ShapeKind::rect, 10, 6, 10, 1.0, 1.0, 0.9f}, {ShapeKind::disc, 12, 40, 30, -1.0, 1.0, 0.1f}};
  } else {
    throw ConfigError("unknown synthetic preset '" + name + "' (default, static, moving-rect, noisy)");
  }
  return s;
}

// Parses "NAME" (a preset) or a comma list of key=value overrides:
//   base=NAME c=C h=H w=W len=L sigma=S seed=N bg=B rect=SIZE:X:Y:VX:VY:I disc=DIAM:X:Y:VX:VY:I
// e.g. "base=moving-rect,len=12,sigma=0.01". Shapes listed replace the preset's shapes.
inline SyntheticSpec parse_synthetic_spec(const std::string& text) {
  if (text.find('=') == std::string::npos) return synthetic_preset(text);
  SyntheticSpec spec = synthetic_preset("default");
  bool replaced_shapes = false;
  auto num = [&](const std::string& s, const std::string& key) {
    double v = 0.0;
    auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || end != s.data() + s.size()) throw ConfigError("synth: bad value for " + key + ": '" + s + "'");
    return v;
  };
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const std::string kv = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    start = comma == std::string::npos ? text.size() + 1 : comma + 1;
    if (kv.empty()) continue;
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("synth: expected key=value, got '" + kv + "'");
    const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
    auto count = [&] {
      const double v = num(val, key);
      if (v < 0 || v != std::floor(v)) throw ConfigError("synth: " + key + " must be a non-negative integer");
      return static_cast<std::size_t>(v);
    };
    if (key == "base") {
      spec = synthetic_preset(val);
    } else if (key == "c") {
      spec.dims.c = count();
    } else if (key == "h") {
      spec.dims.h = count();
    } else if (key == "w") {
      spec.dims.w = count();
    } else if (key == "len") {
      spec.length = count();
    } else if (key == "sigma") {
      spec.noise_sigma = num(val, key);
    } else if (key == "seed") {
      spec.seed = count();
    } else if (key == "bg") {
      spec.background = static_cast<float>(num(val, key));
    } else if (key == "rect" || key == "disc") {
      std::vector<double> f;
      std::size_t p = 0;
      while (p <= val.size()) {
        const auto colon = val.find(':', p);
        f.push_back(num(val.substr(p, colon == std::string::npos ? std::string::npos : colon - p), key));
        p = colon == std::string::npos ? val.size() + 1 : colon + 1;
      }
      if (f.size() != 6) throw ConfigError("synth: " + key + " takes SIZE:X:Y:VX:VY:INTENSITY");
      if (!replaced_shapes) spec.shapes.clear();
      replaced_shapes = true;
      spec.shapes.push_back({key == "rect" ? ShapeKind::rect : ShapeKind::disc, f[0], f[1], f[2], f[3], f[4],
                             static_cast<float>(f[5])});
    } else {
      throw ConfigError("synth: unknown key '" + key + "'");
    }
  }
  return spec;
}

// 8/16-bit binary netpbm: P5 (grey, 1 channel) and P6 (RGB, 3 channels), scaled to [0, 1].
inline DenseTensor decode_pnm(const std::vector<std::uint8_t>& bytes, const std::string& source = "<memory>") {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* what) {
    skip_space();
    std::size_t v = 0, digits = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      if (++digits > 9) throw IoError(source + ": " + what + " out of range");
    }
    if (digits == 0) throw IoError(source + ": missing " + what);
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw IoError(source + ": not a binary PGM/PPM (P5/P6)");
  }
  const std::size_t channels = bytes[1] == '5' ? 1 : 3;
  pos = 2;
  const std::size_t w = number("width"), h = number("height"), maxval = number("maxval");
  if (w == 0 || h == 0 || maxval == 0 || maxval > 65535) throw IoError(source + ": bad header values");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw IoError(source + ": malformed header");
  ++pos;
  const std::size_t bps = maxval > 255 ? 2 : 1;
  if (bytes.size() - pos < w * h * channels * bps) throw IoError(source + ": truncated pixel data");
  DenseTensor t(Dims{channels, h, w});
  const float scale = static_cast<float>(maxval);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < channels; ++c) {
        std::size_t v = bytes[pos++];
        if (bps == 2) v = (v << 8) | bytes[pos++];
        t.at(c, y, x) = static_cast<float>(v) / scale;  // divide, so v/maxval is correctly rounded
      }
    }
  }
  return t;
}

// Encodes 1- or 3-channel maps in [0, 1] as 8-bit P5/P6 (rounded, clamped).
inline std::vector<std::uint8_t> encode_pnm(const DenseTensor& t) {
  if (t.channels() != 1 && t.channels() != 3) throw ShapeError("netpbm needs 1 or 3 channels, got " + to_string(t.dims()));
  const std::string header = std::string(t.channels() == 1 ? "P5" : "P6") + "\n" + std::to_string(t.width()) + " " +
                             std::to_string(t.height()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (std::size_t y = 0; y < t.height(); ++y) {
    for (std::size_t x = 0; x < t.width(); ++x) {
      for (std::size_t c = 0; c < t.channels(); ++c) {
        const float v = std::clamp(t.at(c, y, x), 0.0f, 1.0f);
        out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0f)));
      }
    }
  }
  return out;
}

inline DenseTensor load_pnm(const std::filesystem::path& path) {
  return decode_pnm(detail::read_file(path), path.string());
}

inline void save_pnm(const DenseTensor& t, const std::filesystem::path& path) {
  detail::write_file(path, encode_pnm(t));
}

// Loads the .ten (tensors) or .pgm/.ppm/.pnm files in `dir`, in lexicographic order.
inline std::vector<DenseTensor> load_sequence(const std::filesystem::path& dir, bool tensors) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw IoError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto ext = e.path().extension().string();
    if (tensors ? ext == ".ten" : (ext == ".pgm" || ext == ".ppm" || ext == ".pnm")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no frames found in " + dir.string());
  std::vector<DenseTensor> frames;
  for (const auto& f : files) {
    frames.push_back(tensors ? load_tensor(f) : load_pnm(f));
    if (frames.back().dims() != frames.front().dims()) {
      throw ShapeError(f.string() + " is " + to_string(frames.back().dims()) + ", first frame is " +
                       to_string(frames.front().dims()));
    }
  }
  return frames;
}

}  // namespace deltaflux
