#include <gtest/gtest.h>

#include <random>

#include "deltaflux/dense.hpp"
#include "deltaflux/weights.hpp"
#include "support/random_graph.hpp"

using namespace deltaflux;

namespace {

// Textbook conv in double precision, independent of the plane-accumulation kernel.
DenseTensor conv_oracle(const LayerSpec& l, const DenseTensor& x, bool with_bias = true) {
  const auto& g = l.window;
  DenseTensor y(l.out);
  for (std::size_t co = 0; co < l.out.c; ++co) {
    for (std::size_t oy = 0; oy < l.out.h; ++oy) {
      for (std::size_t ox = 0; ox < l.out.w; ++ox) {
        double s = with_bias ? l.bias[co] : 0.0;
        for (std::size_t ci = 0; ci < l.in.c; ++ci) {
          for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
              const long iy = static_cast<long>(oy * g.sh + ky) - static_cast<long>(g.ph);
              const long ix = static_cast<long>(ox * g.sw + kx) - static_cast<long>(g.pw);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(l.in.h) || ix >= static_cast<long>(l.in.w)) continue;
              s += static_cast<double>(l.weights[((co * l.in.c + ci) * g.kh + ky) * g.kw + kx]) *
                   x.at(ci, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
            }
          }
        }
        y.at(co, oy, ox) = static_cast<float>(s);
      }
    }
  }
  return y;
}

}  // namespace

TEST(DenseConv, ScalarMultiplyAdd) {
  auto g = parse_model("input 1 1 1\nconv 1 1 1 stride 1 pad 0\n");
  g.layer(1).weights = {3.0f};
  g.layer(1).bias = {1.0f};
  auto y = dense_forward(g, DenseTensor(Dims{1, 1, 1}, 2.0f)).output;
  EXPECT_EQ(y.at(0, 0, 0), 7.0f);
}

TEST(DenseConv, OnesKernelOverOnesSumsWindow) {
  auto g = parse_model("input 1 3 3\nconv 1 3 3 stride 1 pad 0\n");
  g.layer(1).weights.assign(9, 1.0f);
  auto y = dense_forward(g, DenseTensor(Dims{1, 3, 3}, 1.0f)).output;
  ASSERT_EQ(y.dims(), (Dims{1, 1, 1}));
  EXPECT_EQ(y.at(0, 0, 0), 9.0f);
}

TEST(DenseConv, MatchesTextbookOracleOnRandomGeometries) {
  std::mt19937_64 rng(21);
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t k = pick(1, 5), s = pick(1, 3), p = pick(0, k - 1);
    const std::size_t h = pick(k, 12), w = pick(k, 12), ci = pick(1, 4), co = pick(1, 4);
    auto g = init_weights(parse_model("input " + std::to_string(ci) + " " + std::to_string(h) + " " +
                                      std::to_string(w) + "\nconv " + std::to_string(co) + " " + std::to_string(k) +
                                      " " + std::to_string(k) + " stride " + std::to_string(s) + " pad " +
                                      std::to_string(p) + "\n"),
                          rng());
    auto x = fixtures::random_tensor(rng, g.input_dims());
    auto y = dense_layer_apply(g.layer(1), x);
    auto ref = conv_oracle(g.layer(1), x);
    EXPECT_LE(max_relative_error(y, ref), 1e-5) << "trial " << trial;
  }
}

TEST(DenseActivation, ReluClampsNegatives) {
  auto g = parse_model("input 1 1 3\nrelu\n");
  auto y = dense_forward(g, DenseTensor(Dims{1, 1, 3}, {-1.0f, 0.0f, 2.0f})).output;
  EXPECT_EQ(std::vector<float>(y.values().begin(), y.values().end()), (std::vector<float>{0, 0, 2}));
}

TEST(DenseActivation, LeakyScalesNegatives) {
  auto g = parse_model("input 1 1 2\nleaky 0.25\n");
  auto y = dense_forward(g, DenseTensor(Dims{1, 1, 2}, {-4.0f, 3.0f})).output;
  EXPECT_EQ(y.at(0, 0, 0), -1.0f);
  EXPECT_EQ(y.at(0, 0, 1), 3.0f);
}

TEST(DensePool, MaxAndAverage) {
  DenseTensor x(Dims{1, 2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(dense_forward(parse_model("input 1 2 2\nmaxpool 2 2 stride 2\n"), x).output.at(0, 0, 0), 4.0f);
  EXPECT_EQ(dense_forward(parse_model("input 1 2 2\navgpool 2 2 stride 2\n"), x).output.at(0, 0, 0), 2.5f);
}

TEST(DenseHead, GapThenLinear) {
  auto g = parse_model("input 2 2 2\ngap\nlinear 1\n");
  g.layer(2).weights = {1.0f, -2.0f};
  g.layer(2).bias = {0.5f};
  DenseTensor x(Dims{2, 2, 2}, {1, 1, 1, 1, 2, 2, 2, 6});
  // means are 1 and 3
  EXPECT_EQ(dense_forward(g, x).output.at(0, 0, 0), 1.0f - 6.0f + 0.5f);
}

TEST(DenseAffine, ScaleAndShift) {
  auto g = parse_model("input 2 1 1\naffine\n");
  g.layer(1).weights = {2.0f, 3.0f};
  g.layer(1).bias = {7.0f, -1.0f};
  auto y = dense_forward(g, DenseTensor(Dims{2, 1, 1}, {1.5f, 2.0f})).output;
  EXPECT_EQ(y.at(0, 0, 0), 10.0f);
  EXPECT_EQ(y.at(1, 0, 0), 5.0f);
}

TEST(DenseForward, IdentityOnlyGraphReturnsInput) {
  std::mt19937_64 rng(1);
  auto g = parse_model("input 2 5 5\nidentity\nidentity\n");
  auto x = fixtures::random_tensor(rng, g.input_dims());
  EXPECT_TRUE(fixtures::bit_identical(dense_forward(g, x).output, x));
}

TEST(DenseForward, AddOfIdentityDoubles) {
  std::mt19937_64 rng(2);
  auto g = parse_model("input 2 5 5\nidentity\nadd 0\n");
  auto x = fixtures::random_tensor(rng, g.input_dims());
  auto y = dense_forward(g, x).output;
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y.data()[i], 2.0f * x.data()[i]);
}

TEST(DenseForward, RandomGraphsGiveFiniteOutputOfInferredShape) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    fixtures::RandomGraphOptions opt;
    opt.allow_tail = trial % 3 == 0;
    auto g = fixtures::random_graph(rng, opt);
    auto run = dense_forward(g, fixtures::random_tensor(rng, g.input_dims(), 0.0f, 1.0f));
    EXPECT_EQ(run.output.dims(), g.output_dims());
    EXPECT_TRUE(run.output.all_finite());
    ASSERT_EQ(run.intermediates.size(), g.size());
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(run.intermediates[i].dims(), g.layer(i).out);
  }
}

TEST(DenseForward, InputShapeMismatchIsShapeError) {
  auto g = parse_model("input 1 4 4\nrelu\n");
  EXPECT_THROW(dense_forward(g, DenseTensor(Dims{1, 4, 5})), ShapeError);
}

TEST(DenseFlops, ChargesPerConvention) {
  auto g = parse_model("input 3 8 8\nconv 4 3 3 stride 1 pad 1\naffine\nrelu\nmaxpool 2 2 stride 2\nidentity\n"
                       "avgpool 2 2 stride 2\ngap\nlinear 5\n");
  EXPECT_EQ(dense_layer_flops(g.layer(0)), 0u);
  EXPECT_EQ(dense_layer_flops(g.layer(1)), 2u * 3 * 9 * 4 * 64);
  EXPECT_EQ(dense_layer_flops(g.layer(2)), 2u * 4 * 64);
  EXPECT_EQ(dense_layer_flops(g.layer(3)), 4u * 64);
  EXPECT_EQ(dense_layer_flops(g.layer(4)), 4u * 16 * 4);
  EXPECT_EQ(dense_layer_flops(g.layer(5)), 0u);
  EXPECT_EQ(dense_layer_flops(g.layer(6)), 4u * 4 * 4);
  EXPECT_EQ(dense_layer_flops(g.layer(7)), 4u * 4);
  EXPECT_EQ(dense_layer_flops(g.layer(8)), 2u * 4 * 5);
}
