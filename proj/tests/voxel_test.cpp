#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "mpcn/errors.hpp"
#include "mpcn/voxel.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace mpcn;
using mpcn::testing::random_grid;
using mpcn::testing::random_prob;

TEST(VoxelGrid, RejectsNonBinaryValues) {
  std::vector<std::uint8_t> d(8, 0);
  d[3] = 2;
  EXPECT_THROW(VoxelGrid(2, d), ShapeError);
  EXPECT_THROW(VoxelGrid(2, std::vector<std::uint8_t>(7, 0)), ShapeError);
}

TEST(Iou, IdentityIsOne) {
  std::mt19937_64 rng(1);
  auto g = random_grid(8, rng);
  for (double t : {0.1, 0.3, 0.9}) EXPECT_EQ(iou(ProbVolume::from_grid(g), g, t), 1.0);
}

TEST(Iou, DisjointIsZero) {
  VoxelGrid full(4);
  for (int x = 0; x < 4; ++x)
    for (int y = 0; y < 4; ++y)
      for (int z = 0; z < 4; ++z) full.set(x, y, z, true);
  EXPECT_EQ(iou(ProbVolume(4, 0.0f), full, 0.3), 0.0);
}

TEST(Iou, ThreeOfSeven) {
  VoxelGrid gt(2);
  ProbVolume pred(2, 0.0f);
  // gt: the x=0 half; pred: 3 voxels inside gt and 3 outside
  for (int y = 0; y < 2; ++y)
    for (int z = 0; z < 2; ++z) gt.set(0, y, z, true);
  pred.data()[gt.index(0, 0, 0)] = 0.9f;
  pred.data()[gt.index(0, 0, 1)] = 0.5f;
  pred.data()[gt.index(0, 1, 0)] = 0.31f;
  pred.data()[gt.index(1, 0, 0)] = 0.8f;
  pred.data()[gt.index(1, 1, 0)] = 0.4f;
  pred.data()[gt.index(1, 1, 1)] = 0.6f;
  pred.data()[gt.index(0, 1, 1)] = 0.25f;  // equal to t: strict comparison leaves it out
  EXPECT_DOUBLE_EQ(iou(pred, gt, 0.25), oracle::iou(pred, gt, 0.25));
  EXPECT_DOUBLE_EQ(iou(pred, gt, 0.25), 3.0 / 7.0);
}

TEST(Iou, BothEmptyIsOne) { EXPECT_EQ(iou(ProbVolume(4, 0.1f), VoxelGrid(4), 0.3), 1.0); }

TEST(Iou, ResolutionMismatchThrows) {
  EXPECT_THROW(iou(ProbVolume(4), VoxelGrid(8), 0.3), ShapeError);
  EXPECT_THROW(shape_distance(ProbVolume(4), VoxelGrid(8)), ShapeError);
}

TEST(Iou, MatchesOracleOnRandomVolumes) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 1000; ++i) {
    const auto p = random_prob(8, rng);
    const auto g = random_grid(8, rng, 0.3);
    EXPECT_EQ(iou(p, g, 0.3), oracle::iou(p, g, 0.3));
  }
}

TEST(Iou, SymmetricForBinaryVolumes) {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 100; ++i) {
    const auto a = random_grid(8, rng, 0.4), b = random_grid(8, rng, 0.4);
    EXPECT_EQ(iou(ProbVolume::from_grid(a), b, 0.5), iou(ProbVolume::from_grid(b), a, 0.5));
    EXPECT_EQ(iou(a, b), iou(ProbVolume::from_grid(a), b, 0.5));
  }
}

TEST(ShapeDistance, Examples) {
  std::mt19937_64 rng(3);
  const auto g = random_grid(8, rng);
  EXPECT_EQ(shape_distance(ProbVolume::from_grid(g), g), 0.0);
  EXPECT_EQ(shape_distance(ProbVolume(8, 1.0f), VoxelGrid(8)), 1.0);
  VoxelGrid a(32), b(32);
  b.set(3, 4, 5, true);
  EXPECT_DOUBLE_EQ(shape_distance(ProbVolume::from_grid(a), b), 1.0 / 32768.0);
  EXPECT_DOUBLE_EQ(shape_distance(a, b), 1.0 / 32768.0);
}

TEST(ShapeDistance, MatchesOracleAndStaysInUnitInterval) {
  std::mt19937_64 rng(13);
  for (int i = 0; i < 1000; ++i) {
    const auto p = random_prob(8, rng);
    const auto g = random_grid(8, rng);
    const double d = shape_distance(p, g);
    EXPECT_NEAR(d, oracle::distance(p, g), 1e-10);
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 1.0);
  }
}

TEST(ProbVolume, BinarizeIsStrict) {
  ProbVolume p(2, 0.25f);
  p.data()[0] = 0.25001f;
  const auto g = p.binarize(0.25);
  EXPECT_EQ(g.count(), 1u);
  EXPECT_TRUE(g[0]);
}

TEST(OrthographicDepth, EmptyAndFull) {
  VoxelGrid e(8), f(8);
  for (int x = 0; x < 8; ++x)
    for (int y = 0; y < 8; ++y)
      for (int z = 0; z < 8; ++z) f.set(x, y, z, true);
  for (auto axis : {Axis::X, Axis::Y, Axis::Z}) {
    for (float v : orthographic_depth(e, axis, false).pixels) EXPECT_EQ(v, 0.0f);
    for (float v : orthographic_depth(f, axis, false).pixels) EXPECT_EQ(v, 1.0f);
  }
}

TEST(OrthographicDepth, SingleVoxel) {
  const int r = 8;
  VoxelGrid g(r);
  g.set(2, 5, 3, true);  // depth index 3 along z
  const auto img = orthographic_depth(g, Axis::Z, false);
  int nonzero = 0;
  for (float v : img.pixels) nonzero += v != 0.0f;
  EXPECT_EQ(nonzero, 1);
  EXPECT_FLOAT_EQ(img.at(2, 5), static_cast<float>(r - 3) / r);
  // from the far side the same voxel sits at depth r - 1 - 3
  EXPECT_FLOAT_EQ(orthographic_depth(g, Axis::Z, true).at(2, 5), static_cast<float>(r - 4) / r);
  // along x: rows y, cols z
  EXPECT_FLOAT_EQ(orthographic_depth(g, Axis::X, false).at(5, 3), static_cast<float>(r - 2) / r);
}

TEST(OrthographicDepth, MatchesRayMarchOracle) {
  std::mt19937_64 rng(5);
  const int r = 8;
  for (int trial = 0; trial < 20; ++trial) {
    const auto g = random_grid(r, rng, 0.05);
    for (int a = 0; a < 3; ++a)
      for (bool flip : {false, true}) {
        const auto img = orthographic_depth(g, static_cast<Axis>(a), flip);
        for (int u = 0; u < r; ++u)
          for (int v = 0; v < r; ++v) {
            float expect = 0;
            for (int d = 0; d < r; ++d) {
              const int s = flip ? r - 1 - d : d;
              int c[3];
              c[a] = s;
              c[a == 0 ? 1 : 0] = u;
              c[a == 2 ? 1 : 2] = v;
              if (g.at(c[0], c[1], c[2])) {
                expect = static_cast<float>(r - d) / r;
                break;
              }
            }
            ASSERT_EQ(img.at(u, v), expect);
          }
      }
  }
}

TEST(DepthPgm, RoundTripIsExact) {
  std::mt19937_64 rng(6);
  const auto g = random_grid(32, rng, 0.02);
  const auto img = orthographic_depth(g, Axis::Y, true);
  const auto path = std::filesystem::temp_directory_path() / "mpcn_depth_roundtrip.pgm";
  write_depth_pgm(img, path);
  EXPECT_EQ(read_depth_pgm(path), img);
  std::filesystem::remove(path);
}

TEST(SliceMontage, WritesPgm) {
  const auto path = std::filesystem::temp_directory_path() / "mpcn_montage.pgm";
  write_slice_montage(ProbVolume(8, 0.5f), path);
  EXPECT_GT(std::filesystem::file_size(path), 64u);
  std::filesystem::remove(path);
}
