// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <set>
#include <string>

#include "cycleseg/errors.hpp"
#include "cycleseg/image_io.hpp"
#include "cycleseg/synthdata.hpp"

using namespace cycleseg;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cycleseg_synth_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Generate, SameSeedIsBitIdentical) {
  SceneSpec s;
  s.seed = 42;
  const auto a = generate(s, 3), b = generate(s, 3);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_TRUE(identical(a.images[i], b.images[i]));
    EXPECT_EQ(a.masks[i], b.masks[i]);
  }
  s.seed = 43;
  EXPECT_FALSE(identical(a.images[0], generate(s, 3).images[0]));
}

TEST(Generate, ImagesInRangeAndMasksNonEmpty) {
  SceneSpec s;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    s.seed = seed;
    const auto g = generate(s, 4);
    ASSERT_EQ(g.images.size(), 4u);
    for (std::size_t i = 0; i < 4; ++i) {
      EXPECT_EQ(g.images[i].shape(), (Shape{1, 3, 64, 64}));
      for (double v : g.images[i].values()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
      EXPECT_GT(g.masks[i].count(), 0u);
      for (auto v : g.masks[i].values) EXPECT_LE(v, 1);
    }
  }
}

TEST(Generate, RejectsBadSpecs) {
  SceneSpec s;
  EXPECT_THROW(generate(s, 1), InvalidConfig);
  s.common_classes.clear();
  EXPECT_THROW(generate(s, 2), InvalidConfig);
}

TEST(Rasterize, DiskAreaWithinBound) {
  for (double r : {4.0, 7.5, 12.0, 20.0}) {
    ShapeInstance disk;
    disk.cx = 32.3;
    disk.cy = 31.8;
    disk.radius = r;
    const double area = static_cast<double>(rasterize(disk, 64, 64).count());
    EXPECT_LE(std::abs(area - std::numbers::pi * r * r), 4.0 * r) << r;
  }
}

TEST(Rasterize, EveryKindCoversItsCentre) {
  for (std::size_t k = 0; k < kShapeKinds; ++k) {
    ShapeInstance s;
    s.kind = static_cast<ShapeKind>(k);
    s.cx = s.cy = 16.0;
    s.radius = 10.0;
    const Mask m = rasterize(s, 32, 32);
    EXPECT_GT(m.count(), 20u) << shape_name(s.kind);
    EXPECT_EQ(parse_shape(shape_name(s.kind)), s.kind);
    // a ring is hollow; everything else is filled at the centre
    EXPECT_EQ(m(16, 16), s.kind == ShapeKind::ring ? 0 : 1) << shape_name(s.kind);
  }
}

TEST(ClassSplit, HeldOutClassesNeverInTraining) {
  const ClassSplit split;
  std::set<ShapeKind> train_seen, test_seen;
  for (const auto& g : generate_groups(train_scene(split, 5), 60, 2)) train_seen.insert(g.common);
  for (const auto& g : generate_groups(test_scene(split, 5), 60, 2)) test_seen.insert(g.common);
  for (auto k : split.test) EXPECT_FALSE(train_seen.contains(k));
  for (auto k : test_seen) EXPECT_TRUE(std::find(split.test.begin(), split.test.end(), k) != split.test.end());
  EXPECT_EQ(test_seen.size(), split.test.size());
}

TEST(Ppm, HeaderAndRoundTrip) {
  SceneSpec s;
  s.seed = 9;
  const Tensor img = generate(s, 2).images[0];
  const auto bytes = encode_ppm(img);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 13), "P6\n64 64\n255\n");
  EXPECT_EQ(bytes.size(), 13u + 64 * 64 * 3);
  const Tensor back = decode_ppm(bytes);
  EXPECT_LE(max_abs_diff(back, img), 0.5 / 255.0 + 1e-12);
  EXPECT_EQ(encode_ppm(back), bytes);
}

TEST(Pgm, RoundTripAndSize) {
  Mask m(64, 64);
  const auto black = encode_pgm(m);
  EXPECT_EQ(black.size(), std::string("P5\n64 64\n255\n").size() + 4096);
  m(3, 5) = m(60, 1) = 1;
  EXPECT_EQ(decode_pgm(encode_pgm(m)), m);
}

TEST(ImageIo, MalformedAndMissing) {
  EXPECT_THROW(decode_ppm({'P', '5', '\n'}), FormatError);
  EXPECT_THROW(decode_pgm({'P', '5', '\n', '2', ' ', '2', '\n', '2', '5', '5', '\n', 0}), FormatError);
  EXPECT_THROW(read_ppm("/nonexistent/x.ppm"), IoError);
}

TEST(Dataset, SaveLoadRoundTrip) {
  const fs::path dir = scratch("ds");
  SceneSpec s;
  s.seed = 11;
  const auto groups = generate_groups(s, 3, 2);
  save_dataset(dir, groups);
  const auto back = load_dataset(dir / "manifest.tsv");
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t g = 0; g < 3; ++g)
    for (std::size_t i = 0; i < 2; ++i) {
      EXPECT_EQ(back[g].masks[i], groups[g].masks[i]);
      EXPECT_EQ(encode_ppm(back[g].images[i]), encode_ppm(groups[g].images[i]));
    }
  fs::remove_all(dir);
  EXPECT_THROW(load_dataset(dir / "manifest.tsv"), IoError);
}
