#pragma once

#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "deltaflux/deltaflux.hpp"

namespace deltaflux::fixtures {

struct RandomGraphOptions {
  std::size_t min_layers = 2;  // including the input layer
  std::size_t max_layers = 12;
  std::size_t min_hw = 8;
  std::size_t max_hw = 16;
  bool allow_tail = false;  // gap + linear head
};

// Builds a model text with a random mix of conv/affine/relu/leaky/maxpool/avgpool/add, then parses it.
inline std::string random_model_text(std::mt19937_64& rng, const RandomGraphOptions& opt = {}) {
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  Dims d{pick(1, 3), pick(opt.min_hw, opt.max_hw), pick(opt.min_hw, opt.max_hw)};
  std::ostringstream text;
  text << "input " << d.c << " " << d.h << " " << d.w << "\n";
  std::vector<Dims> outs{d};
  const std::size_t target = pick(opt.min_layers, opt.max_layers);
  while (outs.size() < target) {
    const std::size_t choice = pick(0, 6);
    if (choice == 0) {
      const std::size_t k = std::min<std::size_t>({pick(0, 2) * 2 + 1, d.h, d.w});
      const std::size_t pad = pick(0, k / 2);
      const std::size_t stride = (d.h >= 6 && d.w >= 6) ? pick(1, 2) : 1;
      const std::size_t co = pick(1, 6);
      text << "conv " << co << " " << k << " " << k << " stride " << stride << " pad " << pad << "\n";
      d = {co, (d.h + 2 * pad - k) / stride + 1, (d.w + 2 * pad - k) / stride + 1};
    } else if (choice == 1) {
      text << "affine\n";
    } else if (choice == 2) {
      text << "relu\n";
    } else if (choice == 3) {
      text << "leaky 0.1\n";
    } else if (choice == 4 || choice == 5) {
      if (d.h < 4 || d.w < 4) continue;
      const std::size_t k = pick(2, 3), s = pick(1, 2);
      text << (choice == 4 ? "maxpool " : "avgpool ") << k << " " << k << " stride " << s << "\n";
      d = {d.c, (d.h - k) / s + 1, (d.w - k) / s + 1};
    } else {
      std::vector<std::size_t> candidates;
      for (std::size_t i = 0; i + 1 < outs.size(); ++i) {
        if (outs[i] == d) candidates.push_back(i);
      }
      if (candidates.empty()) continue;
      text << "add " << candidates[pick(0, candidates.size() - 1)] << "\n";
    }
    outs.push_back(d);
  }
  if (opt.allow_tail) text << "gap\nlinear " << pick(1, 5) << "\n";
  return text.str();
}

inline ModelGraph random_graph(std::mt19937_64& rng, const RandomGraphOptions& opt = {}) {
  return init_weights(parse_model(random_model_text(rng, opt)), rng());
}

// Moving shapes over a noisy background: sparse motion plus dense small changes.
inline std::vector<DenseTensor> random_frames(std::mt19937_64& rng, const Dims& dims, std::size_t length,
                                              double noise_sigma = -1.0) {
  SyntheticSpec s;
  s.dims = dims;
  s.length = length;
  s.seed = rng();
  std::uniform_real_distribution<double> u(0.0, 1.0);
  s.noise_sigma = noise_sigma >= 0.0 ? noise_sigma : (u(rng) < 0.5 ? 0.0 : 0.02 * u(rng));
  const int shapes = 1 + static_cast<int>(rng() % 2);
  for (int i = 0; i < shapes; ++i) {
    MovingShape m;
    m.kind = rng() % 2 ? ShapeKind::rect : ShapeKind::disc;
    m.size = 2.0 + 3.0 * u(rng);
    m.x = u(rng) * static_cast<double>(dims.w);
    m.y = u(rng) * static_cast<double>(dims.h);
    m.vx = 2.0 * u(rng) - 1.0;
    m.vy = 2.0 * u(rng) - 1.0;
    m.intensity = static_cast<float>(u(rng));
    s.shapes.push_back(m);
  }
  return generate_synthetic(s);
}

inline DenseTensor random_tensor(std::mt19937_64& rng, const Dims& dims, float lo = -1.0f, float hi = 1.0f) {
  std::uniform_real_distribution<float> u(lo, hi);
  DenseTensor t(dims);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

// Random delta whose masked pixels carry values and whose other pixels are zero.
inline DeltaTensor random_delta(std::mt19937_64& rng, const Dims& dims, double density, float scale = 1.0f) {
  DeltaTensor d(dims);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_real_distribution<float> v(-scale, scale);
  for (std::size_t p = 0; p < dims.pixels(); ++p) {
    if (u(rng) >= density) continue;
    d.mask.set(p);
    for (std::size_t c = 0; c < dims.c; ++c) d.dense.plane(c)[p] = v(rng);
  }
  return d;
}

inline bool bit_identical(const DenseTensor& a, const DenseTensor& b) {
  if (a.dims() != b.dims()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::bit_cast<std::uint32_t>(a.data()[i]) != std::bit_cast<std::uint32_t>(b.data()[i])) return false;
  }
  return true;
}

}  // namespace deltaflux::fixtures
