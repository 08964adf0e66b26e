#pragma once

#include <cstdint>
#include <vector>

#include "deltaflux/dense.hpp"
#include "deltaflux/model.hpp"
#include "deltaflux/tensor.hpp"

namespace deltaflux {

// Last propagated network input: reference frame plus every emitted input delta.
struct SubtractionBuffer {
  DenseTensor state;
};

// Last emitted network output.
struct AccumulationBuffer {
  DenseTensor state;
};

// Dense state threaded through a nonlinear layer. x_acc follows the exact incoming
// delta stream; y_acc follows the emitted (post-truncation) output stream.
struct NonlinearState {
  DenseTensor x_acc;
  DenseTensor y_acc;

  std::size_t values() const { return x_acc.size() + y_acc.size(); }
};

// FLOPs charged for delta work; null means "don't count".
struct FlopCounter {
  std::uint64_t charged = 0;
  void add(std::uint64_t n) { charged += n; }
};

namespace detail {

inline void charge(FlopCounter* f, std::uint64_t n) {
  if (f != nullptr) f->add(n);
}

// Clears every pixel whose max-channel magnitude is <= theta. Returns nothing; mask is rebuilt.
inline void keep_above(DeltaTensor& t, float theta) {
  const std::size_t hw = t.dense.dims().pixels();
  const std::size_t nc = t.dense.channels();
  float* v = t.dense.data();
  for (std::size_t p = 0; p < hw; ++p) {
    if (!t.mask.test(p)) continue;
    if (pixel_max_abs(t.dense, p) > theta) continue;
    t.mask.set(p, false);
    for (std::size_t c = 0; c < nc; ++c) v[c * hw + p] = 0.0f;
  }
}

}  // namespace detail

struct Truncation {
  DeltaTensor emitted;
  DeltaTensor residual;
};

// Pixel granularity: a pixel is emitted with all of its channels iff max_c |d[c,p]| > theta.
// Everything else with a nonzero channel lands in `residual`; emitted + residual == d.
inline Truncation truncate(const DeltaTensor& d, float theta) {
  Truncation out{DeltaTensor(d.dims()), DeltaTensor(d.dims())};
  const std::size_t hw = d.dims().pixels();
  const std::size_t nc = d.dense.channels();
  const float* src = d.dense.data();
  float* e = out.emitted.dense.data();
  float* r = out.residual.dense.data();
  for (std::size_t p = 0; p < hw; ++p) {
    const float m = pixel_max_abs(d.dense, p);
    if (m == 0.0f) continue;
    const bool keep = m > theta;
    (keep ? out.emitted : out.residual).mask.set(p);
    float* dst = keep ? e : r;
    for (std::size_t c = 0; c < nc; ++c) dst[c * hw + p] = src[c * hw + p];
  }
  return out;
}

// Differences `frame` against the buffer, truncates at theta, and advances the buffer by
// the emitted delta only; the suppressed remainder reappears in the next frame's difference.
inline DeltaTensor subtract(const DenseTensor& frame, SubtractionBuffer& buf, float theta) {
  check_same_shape(frame.dims(), buf.state.dims(), "subtract");
  DeltaTensor d(frame.dims());
  const std::size_t hw = frame.dims().pixels();
  const std::size_t nc = frame.channels();
  const float* f = frame.data();
  float* s = buf.state.data();
  float* v = d.dense.data();
  for (std::size_t i = 0; i < frame.size(); ++i) v[i] = f[i] - s[i];
  for (std::size_t p = 0; p < hw; ++p) d.mask.set(p, pixel_max_abs(d.dense, p) > theta);
  d = zero_outside_mask(std::move(d));
  for (std::size_t p = 0; p < hw; ++p) {
    if (!d.mask.test(p)) continue;
    for (std::size_t c = 0; c < nc; ++c) s[c * hw + p] += v[c * hw + p];
  }
  return d;
}

// Output mask is the receptive-field dilation of the input mask; each masked output is a full
// window dot product over the delta (bias cancels). Charges 2*c_i*k_h*k_w*c_o per masked output.
inline DeltaTensor delta_conv2d(const LayerSpec& l, const DeltaTensor& d, FlopCounter* flops = nullptr) {
  if (l.kind != LayerKind::conv2d) throw ShapeError("delta_conv2d on non-conv layer");
  check_same_shape(d.dims(), l.in, "delta_conv2d input");
  const auto& g = l.window;
  const Dims in = l.in, out = l.out;
  DeltaTensor y(out);
  y.mask = mask_dilate(d.mask, g, out.h, out.w);
  const std::size_t k = in.c * g.kh * g.kw;
  std::vector<float> patch(k);
  const auto masked = y.mask.indices();
  for (std::size_t p : masked) {
    const std::size_t oy = p / out.w, ox = p % out.w;
    std::size_t n = 0;
    for (std::size_t ci = 0; ci < in.c; ++ci) {
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        const long iy = static_cast<long>(oy * g.sh + ky) - static_cast<long>(g.ph);
        for (std::size_t kx = 0; kx < g.kw; ++kx, ++n) {
          const long ix = static_cast<long>(ox * g.sw + kx) - static_cast<long>(g.pw);
          const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(in.h) && ix < static_cast<long>(in.w);
          patch[n] = inside ? d.dense.at(ci, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) : 0.0f;
        }
      }
    }
    for (std::size_t co = 0; co < out.c; ++co) {
      const float* w = l.weights.data() + co * k;
      float acc = 0.0f;
      for (std::size_t i = 0; i < k; ++i) acc += w[i] * patch[i];
      y.dense.at(co, oy, ox) = acc;
    }
  }
  detail::charge(flops, 2ULL * k * out.c * masked.size());
  return y;
}

// Scale only; the shift cancels under subtraction.
inline DeltaTensor delta_affine(const LayerSpec& l, const DeltaTensor& d, FlopCounter* flops = nullptr) {
  check_same_shape(d.dims(), l.in, "delta_affine input");
  DeltaTensor y(l.out);
  y.mask = d.mask;
  const auto masked = d.mask.indices();
  for (std::size_t c = 0; c < l.out.c; ++c) {
    auto src = d.dense.plane(c);
    auto dst = y.dense.plane(c);
    for (std::size_t p : masked) dst[p] = src[p] * l.weights[c];
  }
  detail::charge(flops, static_cast<std::uint64_t>(l.out.c) * masked.size());
  return y;
}

inline DeltaTensor delta_avgpool(const LayerSpec& l, const DeltaTensor& d, FlopCounter* flops = nullptr) {
  check_same_shape(d.dims(), l.in, "delta_avgpool input");
  const auto& g = l.window;
  DeltaTensor y(l.out);
  y.mask = mask_dilate(d.mask, g, l.out.h, l.out.w);
  const float area = static_cast<float>(g.kh * g.kw);
  const auto masked = y.mask.indices();
  for (std::size_t c = 0; c < l.out.c; ++c) {
    for (std::size_t p : masked) {
      const std::size_t y0 = (p / l.out.w) * g.sh, x0 = (p % l.out.w) * g.sw;
      float s = 0.0f;
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        for (std::size_t kx = 0; kx < g.kw; ++kx) s += d.dense.at(c, y0 + ky, x0 + kx);
      }
      y.dense.plane(c)[p] = s / area;
    }
  }
  detail::charge(flops, static_cast<std::uint64_t>(l.out.c) * g.kh * g.kw * masked.size());
  return y;
}

inline DeltaTensor delta_add(const DeltaTensor& a, const DeltaTensor& b, FlopCounter* flops = nullptr) {
  check_same_shape(a.dims(), b.dims(), "delta_add");
  DeltaTensor y(a.dims());
  y.mask = mask_union(a.mask, b.mask);
  const auto masked = y.mask.indices();
  for (std::size_t c = 0; c < a.dims().c; ++c) {
    auto pa = a.dense.plane(c), pb = b.dense.plane(c);
    auto dst = y.dense.plane(c);
    for (std::size_t p : masked) dst[p] = pa[p] + pb[p];
  }
  detail::charge(flops, static_cast<std::uint64_t>(a.dims().c) * masked.size());
  return y;
}

// Any change anywhere recomputes the whole (1x1) output vector.
inline DeltaTensor delta_gap(const LayerSpec& l, const DeltaTensor& d, FlopCounter* flops = nullptr) {
  check_same_shape(d.dims(), l.in, "delta_gap input");
  DeltaTensor y(l.out);
  const auto masked = d.mask.indices();
  if (masked.empty()) return y;
  y.mask.set(0);
  const float n = static_cast<float>(l.in.pixels());
  for (std::size_t c = 0; c < l.in.c; ++c) {
    auto src = d.dense.plane(c);
    float s = 0.0f;
    for (std::size_t p : masked) s += src[p];
    y.dense.at(c, 0, 0) = s / n;
  }
  detail::charge(flops, static_cast<std::uint64_t>(l.in.c) * masked.size());
  return y;
}

inline DeltaTensor delta_linear(const LayerSpec& l, const DeltaTensor& d, FlopCounter* flops = nullptr) {
  check_same_shape(d.dims(), l.in, "delta_linear input");
  DeltaTensor y(l.out);
  if (d.mask.none()) return y;
  y.mask.set(0);
  auto x = d.dense.values();
  for (std::size_t o = 0; o < l.out.c; ++o) {
    float s = 0.0f;
    for (std::size_t i = 0; i < l.in.c; ++i) s += l.weights[o * l.in.c + i] * x[i];
    y.dense.values()[o] = s;
  }
  detail::charge(flops, 2ULL * l.in.c * l.out.c);
  return y;
}

// Dispatch for every kind that passes deltas straight through (no threaded state).
inline DeltaTensor delta_linear_layer(const LayerSpec& l, const DeltaTensor& d, const DeltaTensor* aux,
                                      FlopCounter* flops = nullptr) {
  switch (l.kind) {
    case LayerKind::input: return d;
    case LayerKind::conv2d: return delta_conv2d(l, d, flops);
    case LayerKind::affine: return delta_affine(l, d, flops);
    case LayerKind::avgpool: return delta_avgpool(l, d, flops);
    case LayerKind::global_avgpool: return delta_gap(l, d, flops);
    case LayerKind::linear: return delta_linear(l, d, flops);
    case LayerKind::add:
      if (aux == nullptr) throw ShapeError("delta add evaluated without its joined input");
      return delta_add(d, *aux, flops);
    case LayerKind::activation:
      if (l.activation == Activation::identity) return d;
      break;
    case LayerKind::maxpool:
      break;
  }
  throw ShapeError("delta_linear_layer called on nonlinear " + std::string(kind_name(l.kind)));
}

// Seeds a layer's threaded state from the reference frame's dense input and output.
inline NonlinearState make_nonlinear_state(const DenseTensor& ref_in, const DenseTensor& ref_out) {
  return NonlinearState{ref_in, ref_out};
}

// Reconstructs the dense input at touched pixels, re-evaluates the nonlinearity, and emits the
// truncated difference against the emitted-output history. Residuals suppressed earlier are
// re-examined whenever the pixel is touched again.
inline DeltaTensor delta_nonlinear(const LayerSpec& l, const DeltaTensor& d, NonlinearState& st, float theta,
                                   FlopCounter* flops = nullptr) {
  if (!is_nonlinear(l)) throw ShapeError("delta_nonlinear on linear " + std::string(kind_name(l.kind)));
  check_same_shape(d.dims(), l.in, "delta_nonlinear input");
  check_same_shape(st.x_acc.dims(), l.in, "delta_nonlinear x_acc");
  check_same_shape(st.y_acc.dims(), l.out, "delta_nonlinear y_acc");

  const auto in_masked = d.mask.indices();
  for (std::size_t c = 0; c < l.in.c; ++c) {
    auto x = st.x_acc.plane(c);
    auto dv = d.dense.plane(c);
    for (std::size_t p : in_masked) x[p] += dv[p];
  }

  DeltaTensor cand(l.out);
  if (l.kind == LayerKind::maxpool) {
    const auto& g = l.window;
    cand.mask = mask_dilate(d.mask, g, l.out.h, l.out.w);
    const auto affected = cand.mask.indices();
    for (std::size_t c = 0; c < l.out.c; ++c) {
      for (std::size_t p : affected) {
        const std::size_t y0 = (p / l.out.w) * g.sh, x0 = (p % l.out.w) * g.sw;
        float m = st.x_acc.at(c, y0, x0);
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          for (std::size_t kx = 0; kx < g.kw; ++kx) m = std::max(m, st.x_acc.at(c, y0 + ky, x0 + kx));
        }
        cand.dense.plane(c)[p] = m - st.y_acc.plane(c)[p];
      }
    }
    detail::charge(flops, static_cast<std::uint64_t>(l.out.c) * g.kh * g.kw * affected.size());
  } else {
    cand.mask = d.mask;
    for (std::size_t c = 0; c < l.out.c; ++c) {
      auto x = st.x_acc.plane(c);
      auto yv = st.y_acc.plane(c);
      auto dst = cand.dense.plane(c);
      for (std::size_t p : in_masked) dst[p] = apply_activation(l, x[p]) - yv[p];
    }
    detail::charge(flops, static_cast<std::uint64_t>(l.out.c) * in_masked.size());
  }

  detail::keep_above(cand, theta);
  const auto emitted = cand.mask.indices();
  for (std::size_t c = 0; c < l.out.c; ++c) {
    auto yv = st.y_acc.plane(c);
    auto ev = cand.dense.plane(c);
    for (std::size_t p : emitted) yv[p] += ev[p];
  }
  return cand;
}

// Adds the delta onto the output buffer at masked pixels; unmasked pixels keep their bits.
inline const DenseTensor& accumulate(const DeltaTensor& d, AccumulationBuffer& buf) {
  check_same_shape(d.dims(), buf.state.dims(), "accumulate");
  const auto masked = d.mask.indices();
  for (std::size_t c = 0; c < d.dims().c; ++c) {
    auto dst = buf.state.plane(c);
    auto src = d.dense.plane(c);
    for (std::size_t p : masked) dst[p] += src[p];
  }
  return buf.state;
}

}  // namespace deltaflux
