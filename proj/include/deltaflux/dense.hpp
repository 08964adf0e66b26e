#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "deltaflux/model.hpp"
#include "deltaflux/tensor.hpp"

namespace deltaflux {

// FLOP convention: a multiply-add is 2 FLOPs; comparisons, elementwise activations and
// additions are 1 per value. Bias terms are not charged.
inline std::uint64_t dense_layer_flops(const LayerSpec& l) {
  const std::uint64_t out_vals = l.out.values();
  const std::uint64_t window = l.window.kh * l.window.kw;
  switch (l.kind) {
    case LayerKind::input: return 0;
    case LayerKind::conv2d: return 2ULL * l.out.c * l.in.c * window * l.out.h * l.out.w;
    case LayerKind::affine: return 2ULL * out_vals;
    case LayerKind::activation: return l.activation == Activation::identity ? 0 : out_vals;
    case LayerKind::maxpool:
    case LayerKind::avgpool: return out_vals * window;
    case LayerKind::add: return out_vals;
    case LayerKind::global_avgpool: return l.in.values();
    case LayerKind::linear: return 2ULL * l.in.c * l.out.c;
  }
  return 0;
}

inline std::uint64_t dense_forward_flops(const ModelGraph& g) {
  std::uint64_t total = 0;
  for (const auto& l : g.layers()) total += dense_layer_flops(l);
  return total;
}

inline float apply_activation(const LayerSpec& l, float v) {
  switch (l.activation) {
    case Activation::relu: return v > 0.0f ? v : 0.0f;
    case Activation::leaky_relu: return v > 0.0f ? v : l.leaky_alpha * v;
    case Activation::identity: return v;
  }
  return v;
}

namespace detail {

// Per output value the accumulation order is (input channel, kernel row, kernel column);
// the delta path reproduces the same order at masked pixels.
inline DenseTensor conv2d_dense(const LayerSpec& l, const DenseTensor& x) {
  const auto& g = l.window;
  const Dims in = l.in, out = l.out;
  DenseTensor y(out);
  for (std::size_t co = 0; co < out.c; ++co) {
    float* acc = y.plane(co).data();
    for (std::size_t ci = 0; ci < in.c; ++ci) {
      const float* xp = x.plane(ci).data();
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const float wv = l.weights[((co * in.c + ci) * g.kh + ky) * g.kw + kx];
          // Output columns whose input column ox*sw + kx - pw lands inside [0, in.w).
          std::size_t ox0 = 0;
          if (kx < g.pw) ox0 = (g.pw - kx + g.sw - 1) / g.sw;
          if (in.w + g.pw <= kx) continue;
          std::size_t ox1 = std::min(out.w, (in.w + g.pw - kx - 1) / g.sw + 1);
          for (std::size_t oy = 0; oy < out.h; ++oy) {
            const long iy = static_cast<long>(oy * g.sh + ky) - static_cast<long>(g.ph);
            if (iy < 0 || iy >= static_cast<long>(in.h)) continue;
            const float* xrow = xp + static_cast<std::size_t>(iy) * in.w;
            float* arow = acc + oy * out.w;
            if (g.sw == 1) {
              for (std::size_t ox = ox0; ox < ox1; ++ox) arow[ox] += wv * xrow[ox + kx - g.pw];
            } else {
              for (std::size_t ox = ox0; ox < ox1; ++ox) arow[ox] += wv * xrow[ox * g.sw + kx - g.pw];
            }
          }
        }
      }
    }
    const float b = l.bias[co];
    for (std::size_t p = 0; p < out.pixels(); ++p) acc[p] += b;
  }
  return y;
}

inline DenseTensor pool_dense(const LayerSpec& l, const DenseTensor& x) {
  const auto& g = l.window;
  DenseTensor y(l.out);
  const float inv = static_cast<float>(g.kh * g.kw);
  for (std::size_t c = 0; c < l.out.c; ++c) {
    for (std::size_t oy = 0; oy < l.out.h; ++oy) {
      for (std::size_t ox = 0; ox < l.out.w; ++ox) {
        const std::size_t y0 = oy * g.sh, x0 = ox * g.sw;
        float v = l.kind == LayerKind::maxpool ? x.at(c, y0, x0) : 0.0f;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const float s = x.at(c, y0 + ky, x0 + kx);
            if (l.kind == LayerKind::maxpool) {
              v = std::max(v, s);
            } else {
              v += s;
            }
          }
        }
        y.at(c, oy, ox) = l.kind == LayerKind::maxpool ? v : v / inv;
      }
    }
  }
  return y;
}

}  // namespace detail

// Exact dense evaluation of one layer. `aux` is the joined output for add layers.
inline DenseTensor dense_layer_apply(const LayerSpec& l, const DenseTensor& x, const DenseTensor* aux = nullptr) {
  check_same_shape(x.dims(), l.in, "dense_layer_apply input");
  switch (l.kind) {
    case LayerKind::input:
      return x;
    case LayerKind::conv2d:
      return detail::conv2d_dense(l, x);
    case LayerKind::maxpool:
    case LayerKind::avgpool:
      return detail::pool_dense(l, x);
    case LayerKind::affine: {
      DenseTensor y(l.out);
      for (std::size_t c = 0; c < l.out.c; ++c) {
        auto src = x.plane(c);
        auto dst = y.plane(c);
        for (std::size_t p = 0; p < src.size(); ++p) dst[p] = src[p] * l.weights[c] + l.bias[c];
      }
      return y;
    }
    case LayerKind::activation: {
      DenseTensor y(l.out);
      auto src = x.values();
      auto dst = y.values();
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = apply_activation(l, src[i]);
      return y;
    }
    case LayerKind::add: {
      if (aux == nullptr) throw ShapeError("add layer evaluated without its joined input");
      check_same_shape(aux->dims(), l.in, "add");
      DenseTensor y(l.out);
      auto a = x.values(), b = aux->values();
      auto dst = y.values();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = a[i] + b[i];
      return y;
    }
    case LayerKind::global_avgpool: {
      DenseTensor y(l.out);
      const float n = static_cast<float>(l.in.pixels());
      for (std::size_t c = 0; c < l.in.c; ++c) {
        float s = 0.0f;
        for (float v : x.plane(c)) s += v;
        y.at(c, 0, 0) = s / n;
      }
      return y;
    }
    case LayerKind::linear: {
      DenseTensor y(l.out);
      for (std::size_t o = 0; o < l.out.c; ++o) {
        float s = 0.0f;
        for (std::size_t i = 0; i < l.in.c; ++i) s += l.weights[o * l.in.c + i] * x.values()[i];
        y.values()[o] = s + l.bias[o];
      }
      return y;
    }
  }
  return x;
}

struct DenseRun {
  DenseTensor output;
  std::vector<DenseTensor> intermediates;  // intermediates[i] is layer i's output; [0] is the input
};

inline DenseRun dense_forward(const ModelGraph& g, const DenseTensor& x) {
  check_same_shape(x.dims(), g.input_dims(), "dense_forward input");
  DenseRun run;
  run.intermediates.reserve(g.size());
  run.intermediates.push_back(x);
  for (std::size_t i = 1; i < g.size(); ++i) {
    const LayerSpec& l = g.layer(i);
    const DenseTensor* aux = l.kind == LayerKind::add ? &run.intermediates[l.add_ref] : nullptr;
    run.intermediates.push_back(dense_layer_apply(l, run.intermediates.back(), aux));
  }
  run.output = run.intermediates.back();
  return run;
}

}  // namespace deltaflux
