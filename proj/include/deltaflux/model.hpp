#pragma once

#include <cstddef>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "deltaflux/error.hpp"
#include "deltaflux/tensor.hpp"

namespace deltaflux {

enum class LayerKind { input, conv2d, affine, activation, maxpool, avgpool, add, global_avgpool, linear };

enum class Activation { identity, relu, leaky_relu };

inline constexpr LayerKind kAllLayerKinds[] = {LayerKind::input,   LayerKind::conv2d,         LayerKind::affine,
                                               LayerKind::activation, LayerKind::maxpool,     LayerKind::avgpool,
                                               LayerKind::add,     LayerKind::global_avgpool, LayerKind::linear};

inline std::string_view kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::input: return "input";
    case LayerKind::conv2d: return "conv";
    case LayerKind::affine: return "affine";
    case LayerKind::activation: return "activation";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::avgpool: return "avgpool";
    case LayerKind::add: return "add";
    case LayerKind::global_avgpool: return "gap";
    case LayerKind::linear: return "linear";
  }
  return "?";
}

struct LayerSpec {
  LayerKind kind = LayerKind::input;
  Activation activation = Activation::identity;
  float leaky_alpha = 0.0f;
  WindowGeometry window;           // conv, maxpool, avgpool
  std::size_t out_channels = 0;    // conv, linear
  std::size_t add_ref = 0;         // add: index of the joined earlier layer
  bool truncation_site = false;
  int source_line = 0;

  // conv: c_o x c_i x k_h x k_w weights and c_o biases.
  // linear: n_out x n_in weights and n_out biases.
  // affine: per-channel scale in `weights`, shift in `bias`.
  std::vector<float> weights;
  std::vector<float> bias;

  // Filled by shape inference.
  Dims in;
  Dims out;

  bool has_weights() const {
    return kind == LayerKind::conv2d || kind == LayerKind::linear || kind == LayerKind::affine;
  }
};

// Nonlinear layers need threaded dense state under delta execution; every other kind
// commutes with subtraction and passes deltas straight through.
inline bool is_nonlinear(LayerKind kind, Activation act = Activation::relu) {
  switch (kind) {
    case LayerKind::activation: return act != Activation::identity;
    case LayerKind::maxpool: return true;
    default: return false;
  }
}
inline bool is_nonlinear(const LayerSpec& l) { return is_nonlinear(l.kind, l.activation); }
inline bool is_linear(const LayerSpec& l) { return !is_nonlinear(l); }

inline std::string describe(const LayerSpec& l, std::size_t index) {
  std::string s = "layer " + std::to_string(index) + " (" + std::string(kind_name(l.kind));
  if (l.kind == LayerKind::activation) {
    s += l.activation == Activation::relu ? ":relu" : l.activation == Activation::leaky_relu ? ":leaky" : ":identity";
  }
  if (l.source_line > 0) s += ", line " + std::to_string(l.source_line);
  return s + ")";
}

// Ordered layer list; layers[0] is always the network input.
class ModelGraph {
 public:
  ModelGraph() = default;

  // Runs shape inference and validates structure. Throws ShapeError naming both layers on mismatch.
  ModelGraph(Dims input_dims, std::vector<LayerSpec> layers) : layers_(std::move(layers)) {
    if (layers_.empty() || layers_[0].kind != LayerKind::input) {
      LayerSpec in;
      in.kind = LayerKind::input;
      in.truncation_site = true;
      layers_.insert(layers_.begin(), in);
    }
    infer_shapes(input_dims);
  }

  const Dims& input_dims() const { return layers_.front().out; }
  const Dims& output_dims() const { return layers_.back().out; }
  std::size_t size() const { return layers_.size(); }
  const LayerSpec& layer(std::size_t i) const { return layers_.at(i); }
  LayerSpec& layer(std::size_t i) { return layers_.at(i); }
  const std::vector<LayerSpec>& layers() const { return layers_; }

  std::size_t nonlinear_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += is_nonlinear(l) ? 1 : 0;
    return n;
  }

  // True when some add layer joins layer i's output.
  bool is_add_source(std::size_t i) const {
    for (const auto& l : layers_) {
      if (l.kind == LayerKind::add && l.add_ref == i) return true;
    }
    return false;
  }

 private:
  void infer_shapes(Dims input_dims) {
    if (layers_.size() < 2) throw ShapeError("model has no layers after input");
    if (input_dims.c == 0 || input_dims.h == 0 || input_dims.w == 0) {
      throw ShapeError("input dimensions must be positive, got " + to_string(input_dims));
    }
    layers_[0].in = layers_[0].out = input_dims;
    bool seen_gap = false;
    for (std::size_t i = 1; i < layers_.size(); ++i) {
      LayerSpec& l = layers_[i];
      const LayerSpec& prev = layers_[i - 1];
      if (l.kind == LayerKind::input) throw ShapeError(describe(l, i) + ": input may only appear first");
      l.in = prev.out;
      auto fail = [&](const std::string& why) {
        throw ShapeError(describe(l, i) + " cannot follow " + describe(prev, i - 1) + " with output " +
                         to_string(prev.out) + ": " + why);
      };
      switch (l.kind) {
        case LayerKind::conv2d:
        case LayerKind::maxpool:
        case LayerKind::avgpool: {
          std::size_t oh = 0, ow = 0;
          try {
            oh = l.window.out_h(l.in.h);
            ow = l.window.out_w(l.in.w);
          } catch (const ShapeError& e) {
            fail(e.what());
          }
          const std::size_t oc = l.kind == LayerKind::conv2d ? l.out_channels : l.in.c;
          if (oc == 0) fail("zero output channels");
          l.out = {oc, oh, ow};
          break;
        }
        case LayerKind::affine:
        case LayerKind::activation:
          l.out = l.in;
          break;
        case LayerKind::add: {
          if (l.add_ref >= i) {
            throw ShapeError(describe(l, i) + " references layer " + std::to_string(l.add_ref) +
                             ", which is not strictly earlier");
          }
          const LayerSpec& src = layers_[l.add_ref];
          if (src.out != l.in) {
            throw ShapeError(describe(l, i) + " joins " + describe(src, l.add_ref) + " with output " +
                             to_string(src.out) + " to " + describe(prev, i - 1) + " with output " +
                             to_string(prev.out) + ": shapes differ");
          }
          l.out = l.in;
          break;
        }
        case LayerKind::global_avgpool:
          l.out = {l.in.c, 1, 1};
          seen_gap = true;
          break;
        case LayerKind::linear:
          if (!seen_gap || l.in.h != 1 || l.in.w != 1) fail("linear requires a 1x1 map after gap");
          if (l.out_channels == 0) fail("zero output features");
          l.out = {l.out_channels, 1, 1};
          break;
        case LayerKind::input:
          break;
      }
      size_parameters(l);
    }
  }

  static void size_parameters(LayerSpec& l) {
    std::size_t nw = 0, nb = 0;
    switch (l.kind) {
      case LayerKind::conv2d:
        nw = l.out.c * l.in.c * l.window.kh * l.window.kw;
        nb = l.out.c;
        break;
      case LayerKind::linear:
        nw = l.out.c * l.in.c;
        nb = l.out.c;
        break;
      case LayerKind::affine:
        if (l.weights.size() != l.in.c) l.weights.assign(l.in.c, 1.0f);
        if (l.bias.size() != l.in.c) l.bias.assign(l.in.c, 0.0f);
        return;
      default:
        return;
    }
    if (l.weights.size() != nw) l.weights.assign(nw, 0.0f);
    if (l.bias.size() != nb) l.bias.assign(nb, 0.0f);
  }

  std::vector<LayerSpec> layers_;
};

namespace detail {

inline std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

}  // namespace detail

// Line-oriented model config:
//   input C H W | conv C_OUT KH KW stride S pad P | affine | relu | leaky A | identity
//   maxpool KH KW stride S | avgpool KH KW stride S | add LAYER_INDEX | gap | linear N_OUT
// '#' starts a comment. Any layer line may end with `notrunc` to drop its truncation site.
// Layer 0 is the input line; `add K` joins layer K's output onto the previous layer's output.
inline ModelGraph parse_model(std::string_view text) {
  std::optional<Dims> input;
  std::vector<LayerSpec> layers;
  std::istringstream stream{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(stream, raw)) {
    ++line_no;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    auto tok = detail::split_ws(raw);
    if (tok.empty()) continue;

    auto err = [&](const std::string& why) -> ConfigError {
      return ConfigError("model line " + std::to_string(line_no) + ": " + why);
    };
    bool notrunc = false;
    if (tok.back() == "notrunc") {
      notrunc = true;
      tok.pop_back();
    }
    auto count = [&](std::size_t idx, const char* what) -> std::size_t {
      if (idx >= tok.size()) throw err(std::string("missing ") + what);
      try {
        std::size_t used = 0;
        long v = std::stol(tok[idx], &used);
        if (used != tok[idx].size() || v < 0) throw err(std::string("bad ") + what + " '" + tok[idx] + "'");
        return static_cast<std::size_t>(v);
      } catch (const std::logic_error&) {
        throw err(std::string("bad ") + what + " '" + tok[idx] + "'");
      }
    };
    auto keyword = [&](std::size_t idx, const char* kw) {
      if (idx >= tok.size() || tok[idx] != kw) throw err(std::string("expected '") + kw + "'");
    };
    auto arity = [&](std::size_t n) {
      if (tok.size() != n) throw err("'" + tok[0] + "' takes " + std::to_string(n - 1) + " arguments");
    };

    const std::string& op = tok[0];
    if (op == "input") {
      if (input) throw err("duplicate input line");
      if (!layers.empty()) throw err("input must precede all layers");
      arity(4);
      input = Dims{count(1, "channels"), count(2, "height"), count(3, "width")};
      LayerSpec l;
      l.kind = LayerKind::input;
      l.truncation_site = !notrunc;
      l.source_line = line_no;
      layers.push_back(l);
      continue;
    }
    if (!input) throw err("first directive must be 'input'");

    LayerSpec l;
    l.source_line = line_no;
    if (op == "conv") {
      arity(8);
      l.kind = LayerKind::conv2d;
      l.out_channels = count(1, "output channels");
      l.window.kh = count(2, "kernel height");
      l.window.kw = count(3, "kernel width");
      keyword(4, "stride");
      l.window.sh = l.window.sw = count(5, "stride");
      keyword(6, "pad");
      l.window.ph = l.window.pw = count(7, "padding");
      if (l.window.kh == 0 || l.window.kw == 0 || l.window.sh == 0) throw err("kernel and stride must be positive");
    } else if (op == "maxpool" || op == "avgpool") {
      arity(5);
      l.kind = op == "maxpool" ? LayerKind::maxpool : LayerKind::avgpool;
      l.window.kh = count(1, "kernel height");
      l.window.kw = count(2, "kernel width");
      keyword(3, "stride");
      l.window.sh = l.window.sw = count(4, "stride");
      if (l.window.kh == 0 || l.window.kw == 0 || l.window.sh == 0) throw err("kernel and stride must be positive");
    } else if (op == "affine") {
      arity(1);
      l.kind = LayerKind::affine;
    } else if (op == "relu" || op == "identity") {
      arity(1);
      l.kind = LayerKind::activation;
      l.activation = op == "relu" ? Activation::relu : Activation::identity;
    } else if (op == "leaky") {
      arity(2);
      l.kind = LayerKind::activation;
      l.activation = Activation::leaky_relu;
      try {
        l.leaky_alpha = std::stof(tok[1]);
      } catch (const std::logic_error&) {
        throw err("bad leaky slope '" + tok[1] + "'");
      }
    } else if (op == "add") {
      arity(2);
      l.kind = LayerKind::add;
      l.add_ref = count(1, "layer index");
    } else if (op == "gap") {
      arity(1);
      l.kind = LayerKind::global_avgpool;
    } else if (op == "linear") {
      arity(2);
      l.kind = LayerKind::linear;
      l.out_channels = count(1, "output features");
    } else {
      throw err("unknown directive '" + op + "'");
    }
    l.truncation_site = is_nonlinear(l) && !notrunc;
    layers.push_back(std::move(l));
  }
  if (!input) throw ConfigError("model: missing 'input' line");
  return ModelGraph(*input, std::move(layers));
}

}  // namespace deltaflux
