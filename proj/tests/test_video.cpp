#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "deltaflux/video.hpp"
#include "support/random_graph.hpp"

using namespace deltaflux;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / ("deltaflux_test_video_" + name);
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

std::size_t changed_pixels(const DenseTensor& a, const DenseTensor& b) {
  std::size_t n = 0;
  for (std::size_t p = 0; p < a.dims().pixels(); ++p) {
    for (std::size_t c = 0; c < a.channels(); ++c) {
      if (a.plane(c)[p] != b.plane(c)[p]) {
        ++n;
        break;
      }
    }
  }
  return n;
}

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

}  // namespace

TEST(Synthetic, StaticSceneHasNoChange) {
  auto frames = generate_synthetic(synthetic_preset("static"));
  for (std::size_t t = 1; t < frames.size(); ++t) {
    EXPECT_TRUE(fixtures::bit_identical(frames[t], frames[0]));
  }
}

TEST(Synthetic, MovingRectChangesOnlySweptPixels) {
  auto spec = synthetic_preset("moving-rect");
  auto frames = generate_synthetic(spec);
  for (std::size_t t = 1; t < frames.size(); ++t) {
    const std::size_t n = changed_pixels(frames[t], frames[t - 1]);
    EXPECT_GT(n, 0u);
    EXPECT_LE(n, 2u * 4 * (4 + 1));
    EXPECT_GE(1.0 - static_cast<double>(n) / 4096.0, 1.0 - 40.0 / 4096.0);
  }
}

TEST(Synthetic, SameSeedIsBitIdenticalAndSeedsDiffer) {
  auto spec = synthetic_preset("default");
  auto a = generate_synthetic(spec), b = generate_synthetic(spec);
  for (std::size_t t = 0; t < a.size(); ++t) EXPECT_TRUE(fixtures::bit_identical(a[t], b[t]));
  spec.seed += 1;
  auto c = generate_synthetic(spec);
  EXPECT_FALSE(fixtures::bit_identical(a[1], c[1]));
}

TEST(Synthetic, ShapesReflectAndStayInFrame) {
  SyntheticSpec s;
  s.dims = {1, 16, 16};
  s.length = 60;
  s.background = 0.0f;
  s.shapes = {{ShapeKind::rect, 4, 0, 0, 3.0, 2.0, 1.0f}};
  for (const auto& f : generate_synthetic(s)) {
    std::size_t lit = 0;
    for (float v : f.values()) lit += v == 1.0f ? 1 : 0;
    EXPECT_EQ(lit, 16u);
  }
}

TEST(Synthetic, NoiseStaysInUnitRange) {
  auto frames = generate_synthetic(synthetic_preset("noisy"));
  for (const auto& f : frames) {
    for (float v : f.values()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
}

TEST(Synthetic, InvalidSpecIsConfigError) {
  SyntheticSpec s;
  s.noise_sigma = -1.0;
  EXPECT_THROW(generate_synthetic(s), ConfigError);
  s.noise_sigma = 0.0;
  s.length = 0;
  EXPECT_THROW(generate_synthetic(s), ConfigError);
}

TEST(SyntheticSpecParse, PresetsAndOverrides) {
  EXPECT_EQ(parse_synthetic_spec("moving-rect").dims, (Dims{1, 64, 64}));
  auto s = parse_synthetic_spec("base=moving-rect,len=12,sigma=0.01,c=3,rect=5:1:2:0.5:0:0.7");
  EXPECT_EQ(s.length, 12u);
  EXPECT_EQ(s.noise_sigma, 0.01);
  EXPECT_EQ(s.dims.c, 3u);
  ASSERT_EQ(s.shapes.size(), 1u);
  EXPECT_EQ(s.shapes[0].size, 5.0);
  EXPECT_EQ(s.shapes[0].vx, 0.5);
  EXPECT_THROW(parse_synthetic_spec("nonsense"), ConfigError);
  EXPECT_THROW(parse_synthetic_spec("len=x"), ConfigError);
  EXPECT_THROW(parse_synthetic_spec("rect=1:2"), ConfigError);
  EXPECT_THROW(parse_synthetic_spec("colour=3"), ConfigError);
}

TEST(Pnm, EightBitRoundTripIsBitExact) {
  std::mt19937_64 rng(1);
  for (std::size_t c : {1u, 3u}) {
    DenseTensor t(Dims{c, 5, 7});
    for (auto& v : t.values()) v = static_cast<float>(rng() % 256) / 255.0f;
    auto back = decode_pnm(encode_pnm(t));
    EXPECT_TRUE(fixtures::bit_identical(back, t));
    EXPECT_EQ(encode_pnm(back), encode_pnm(t));
  }
}

TEST(Pnm, SixteenBitAndCommentsDecode) {
  auto bytes = bytes_of("P5\n# a comment\n2 1\n# another\n65535\n");
  for (std::uint8_t b : {0xFF, 0xFF, 0x00, 0x00}) bytes.push_back(b);
  auto t = decode_pnm(bytes);
  EXPECT_EQ(t.dims(), (Dims{1, 1, 2}));
  EXPECT_EQ(t.at(0, 0, 0), 1.0f);
  EXPECT_EQ(t.at(0, 0, 1), 0.0f);
}

TEST(Pnm, RgbChannelsSplitIntoPlanes) {
  auto bytes = bytes_of("P6 1 1 255\n");
  for (std::uint8_t b : {255, 0, 51}) bytes.push_back(b);
  auto t = decode_pnm(bytes);
  EXPECT_EQ(t.at(0, 0, 0), 1.0f);
  EXPECT_EQ(t.at(1, 0, 0), 0.0f);
  EXPECT_EQ(t.at(2, 0, 0), 0.2f);
}

TEST(Pnm, MalformedInputsAreIoErrors) {
  EXPECT_THROW(decode_pnm(bytes_of("P2\n1 1\n255\n0")), IoError);
  EXPECT_THROW(decode_pnm(bytes_of("P5\n2 2\n255\n\x01")), IoError);
  EXPECT_THROW(decode_pnm(bytes_of("P5\n2\n")), IoError);
  EXPECT_THROW(decode_pnm(bytes_of("P5\n1 1\n70000\n\x01\x01")), IoError);
  EXPECT_THROW(encode_pnm(DenseTensor(Dims{2, 2, 2})), ShapeError);
}

TEST(LoadSequence, LexicographicOrderAndDimensionCheck) {
  auto dir = fresh_dir("seq");
  for (int i : {2, 0, 1}) {
    save_pnm(DenseTensor(Dims{1, 3, 3}, static_cast<float>(i * 100) / 255.0f), dir / ("f" + std::to_string(i) + ".pgm"));
  }
  auto frames = load_sequence(dir, false);
  ASSERT_EQ(frames.size(), 3u);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(frames[i].at(0, 0, 0), static_cast<float>(i * 100) / 255.0f);
  save_pnm(DenseTensor(Dims{1, 4, 3}), dir / "f3.pgm");
  EXPECT_THROW(load_sequence(dir, false), ShapeError);
  EXPECT_THROW(load_sequence(dir / "missing", false), IoError);
  EXPECT_THROW(load_sequence(fresh_dir("empty"), true), IoError);
  std::filesystem::remove_all(dir);
}
