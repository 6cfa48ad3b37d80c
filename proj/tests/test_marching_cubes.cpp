#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

using namespace larecon;

TEST(MarchingCubes, SolidSphereIsClosedGenusZero) {
  const GridSpec g({14, 14, 14}, 2.0);
  const OccupancyVolume v = oracle::ball_volume(g, {6.5, 6.8, 7.1}, 4.3);
  const TriMesh m = marching_cubes(v, 0.5);
  EXPECT_TRUE(m.is_closed());
  EXPECT_EQ(m.boundary_edge_count(), 0u);
  EXPECT_EQ(m.euler_characteristic(), 2);
  EXPECT_GT(m.signed_volume(), 0.0);
}

TEST(MarchingCubes, SingleVoxelEnclosesPositiveVolume) {
  const GridSpec g({5, 5, 5}, 3.0);
  OccupancyVolume v(g);
  v.set({2, 2, 2}, true);
  const TriMesh m = marching_cubes(v, 0.5);
  EXPECT_TRUE(m.is_closed());
  EXPECT_EQ(m.euler_characteristic(), 2);
  // Octahedron with vertices half a voxel from the center: (4/3) * (s/2)^3.
  EXPECT_NEAR(m.signed_volume(), 4.0 / 3.0 * std::pow(1.5, 3), 1e-9);
}

TEST(MarchingCubes, NoCrossing) {
  const GridSpec g({4, 4, 4}, 1.0);
  try {
    marching_cubes(OccupancyVolume(g), 0.5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoSurface);
  }
  ScalarField f(g, 1.0);
  EXPECT_THROW(marching_cubes(f, 1.0), Error);
  EXPECT_THROW(marching_cubes(f, 2.0), Error);
}

TEST(MarchingCubes, SphereFieldVerticesOnLevelSet) {
  const GridSpec g({20, 20, 20}, 1.0, Point3(-9.5, -9.5, -9.5));
  ScalarField f(g);
  for (std::size_t n = 0; n < g.size(); ++n) f.data[n] = 6.0 - g.world_of(g.unlinear(n)).norm();
  const TriMesh m = marching_cubes(f, 0.0);
  EXPECT_TRUE(m.is_closed());
  EXPECT_EQ(m.euler_characteristic(), 2);
  EXPECT_NEAR(m.signed_volume(), 4.0 / 3.0 * M_PI * 216.0, 0.03 * 4.0 / 3.0 * M_PI * 216.0);
  for (const auto& p : m.vertices()) EXPECT_NEAR(p.norm(), 6.0, 0.1);
}

TEST(MarchingCubes, RandomSingleComponentSolidsAreWatertight) {
  std::mt19937_64 rng(77);
  int tested = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const GridSpec g({7, 7, 7}, 1.0);
    OccupancyVolume inner(g);
    std::bernoulli_distribution coin(0.55);
    for (int z = 1; z < 6; ++z)
      for (int y = 1; y < 6; ++y)
        for (int x = 1; x < 6; ++x) inner.set({x, y, z}, coin(rng));
    // Keep the largest 6-connected component.
    const auto [labels, count] = label_components(inner);
    if (count == 0) continue;
    std::vector<int> sizes(count + 1, 0);
    for (int l : labels) ++sizes[l];
    int best = 1;
    for (int l = 2; l <= count; ++l)
      if (sizes[l] > sizes[best]) best = l;
    OccupancyVolume v(g);
    for (std::size_t n = 0; n < g.size(); ++n) v.data[n] = labels[n] == best;
    const TriMesh m = marching_cubes(v, 0.5);
    ASSERT_EQ(m.boundary_edge_count(), 0u) << "trial " << trial;
    ASSERT_TRUE(m.is_closed()) << "trial " << trial;
    ASSERT_GT(m.signed_volume(), 0.0) << "trial " << trial;
    ++tested;
  }
  EXPECT_GT(tested, 250);
}

TEST(MarchingCubes, VoxelizeRoundTripOfSmoothSolid) {
  // Mesh of a ball, voxelized back, should reproduce most of the ball.
  const GridSpec g({16, 16, 16}, 1.0);
  const OccupancyVolume v = oracle::ball_volume(g, {7.5, 7.5, 7.5}, 5.0);
  const OccupancyVolume back = voxelize(marching_cubes(v, 0.5), g);
  EXPECT_GT(dice(v, back), 0.9);
}
