#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "pcal/error.hpp"
#include "pcal/geom.hpp"
#include "pcal/spatial_index.hpp"
#include "support/test_util.hpp"

using namespace pcal;
using pcal::tu::brute_force;

TEST(Ply, LoadsThreeVertices) {
  const auto cloud = load_ply(
      "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\n"
      "property float z\nend_header\n0 0 0\n1 0 0\n0 1 0\n");
  ASSERT_EQ(cloud.size(), 3u);
  EXPECT_EQ(cloud.positions[1], (Point3{1, 0, 0}));
  EXPECT_EQ(cloud.positions[2], (Point3{0, 1, 0}));
  EXPECT_FALSE(cloud.colors.has_value());
}

TEST(Ply, CountMismatchIsParseError) {
  const std::string text =
      "ply\nformat ascii 1.0\nelement vertex 4\nproperty float x\nproperty float y\n"
      "property float z\nend_header\n0 0 0\n1 0 0\n0 1 0\n";
  try {
    load_ply(text);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_GT(e.line(), 0u);
    EXPECT_NE(std::string(e.what()).find("count mismatch"), std::string::npos);
  }
}

TEST(Ply, RejectsMalformedInput) {
  EXPECT_THROW(load_ply("plx\n"), ParseError);
  EXPECT_THROW(load_ply("ply\nformat binary_little_endian 1.0\nend_header\n"), ParseError);
  EXPECT_THROW(load_ply("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\n"
                        "property float y\nproperty float z\nend_header\n0 nan 0\n"),
               ParseError);
  try {
    load_ply("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\n"
             "property float z\nend_header\n0 abc 0\n");
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 8u);
  }
}

TEST(Ply, ColorsMapToUnitRange) {
  const auto cloud = load_ply(
      "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\n"
      "property float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\n"
      "end_header\n1 2 3 255 0 51\n");
  ASSERT_TRUE(cloud.colors);
  EXPECT_FLOAT_EQ((*cloud.colors)[0][0], 1.0f);
  EXPECT_FLOAT_EQ((*cloud.colors)[0][1], 0.0f);
  EXPECT_FLOAT_EQ((*cloud.colors)[0][2], static_cast<float>(51 / 255.0));
}

TEST(Ply, SaveLoadRoundTrip) {
  auto cloud = tu::random_cloud(128, 99);
  Rng rng(3);
  std::vector<Point3> colors(cloud.size());
  for (auto& c : colors) {
    for (float& v : c) v = static_cast<float>(uniform_index(rng, 256)) / 255.0f;
  }
  cloud.colors = colors;
  const std::string text = save_ply(cloud);
  EXPECT_EQ(text.rfind("ply\nformat ascii 1.0\nelement vertex 128\nproperty float x\n", 0), 0u);
  const auto back = load_ply(text);
  ASSERT_EQ(back.size(), cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (int d = 0; d < 3; ++d) {
      EXPECT_NEAR(back.positions[i][d], cloud.positions[i][d], 1e-5);
      EXPECT_FLOAT_EQ((*back.colors)[i][d], (*cloud.colors)[i][d]);
    }
  }
}

TEST(Normalize, TwoPointSymmetry) {
  PointCloud c;
  c.positions = {{1, 1, 1}, {3, 1, 1}};
  const auto n = normalize_cloud(c);
  EXPECT_NEAR(n.positions[0][0], -1, 1e-6);
  EXPECT_NEAR(n.positions[1][0], 1, 1e-6);
  EXPECT_NEAR(n.positions[0][1], 0, 1e-6);
  EXPECT_NEAR(n.positions[1][2], 0, 1e-6);
}

TEST(Normalize, SinglePointGoesToOrigin) {
  PointCloud c;
  c.positions = {{5, 2, 7}};
  const auto n = normalize_cloud(c);
  EXPECT_EQ(n.positions[0], (Point3{0, 0, 0}));
}

TEST(Normalize, InvariantsIdempotenceAndRotationEquivariance) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto cloud = tu::random_cloud(200, seed, 3.0f);
    for (auto& p : cloud.positions) p[0] += 4.0f;
    const auto n = normalize_cloud(cloud);
    double c[3] = {0, 0, 0}, max_norm = 0;
    for (const auto& p : n.positions) {
      for (int d = 0; d < 3; ++d) c[d] += p[d];
      max_norm = std::max(max_norm, std::sqrt(double(p[0]) * p[0] + double(p[1]) * p[1] + double(p[2]) * p[2]));
    }
    for (double v : c) EXPECT_NEAR(v / n.size(), 0, 1e-6);
    EXPECT_NEAR(max_norm, 1, 1e-6);

    const auto twice = normalize_cloud(n);
    for (std::size_t i = 0; i < n.size(); ++i) {
      for (int d = 0; d < 3; ++d) EXPECT_NEAR(twice.positions[i][d], n.positions[i][d], 1e-6);
    }

    // Random rotation from a normalized quaternion.
    Rng rng(seed + 100);
    double q[4], len = 0;
    for (double& v : q) {
      v = standard_normal(rng);
      len += v * v;
    }
    len = std::sqrt(len);
    for (double& v : q) v /= len;
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    const double r[9] = {1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
                         2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
                         2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
    auto rotate = [&](const Point3& p) {
      Point3 o;
      for (int i = 0; i < 3; ++i) o[i] = static_cast<float>(r[i * 3] * p[0] + r[i * 3 + 1] * p[1] + r[i * 3 + 2] * p[2]);
      return o;
    };
    PointCloud rotated = cloud;
    for (auto& p : rotated.positions) p = rotate(p);
    const auto nr = normalize_cloud(rotated);
    for (std::size_t i = 0; i < n.size(); ++i) {
      const auto expect = rotate(n.positions[i]);
      for (int d = 0; d < 3; ++d) EXPECT_NEAR(nr.positions[i][d], expect[d], 1e-5);
    }
  }
}

TEST(SpatialIndex, CollinearExamples) {
  PointCloud c;
  c.positions = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {5, 0, 0}};
  SpatialIndex index(c);
  EXPECT_EQ(index.query(PointId{0}, Knn{2}), (std::vector<PointId>{1, 2}));
  EXPECT_EQ(index.query(PointId{0}, Fdn{2.0f}), (std::vector<PointId>{1, 2}));
  EXPECT_EQ(index.query(PointId{0}, Knn{10}).size(), 3u);
  EXPECT_EQ(index.query(Point3{0, 0, 0}, Knn{1}), (std::vector<PointId>{0}));
}

TEST(SpatialIndex, InvalidParameters) {
  const auto c = tu::random_cloud(10, 1);
  SpatialIndex index(c);
  EXPECT_THROW(index.query(PointId{0}, Knn{0}), InvalidParameter);
  EXPECT_THROW(index.query(PointId{0}, Fdn{0.0f}), InvalidParameter);
  EXPECT_THROW(index.query(PointId{0}, Fdn{-1.0f}), InvalidParameter);
  EXPECT_THROW(index.query(PointId{10}, Knn{1}), InvalidParameter);
}

TEST(SpatialIndex, KnnEveryPointMatchesExhaustiveScan) {
  const auto c = tu::random_cloud(512, 42);
  SpatialIndex index(c);
  for (PointId i = 0; i < c.size(); ++i) {
    ASSERT_EQ(index.query(i, Knn{8}), brute_force(c, c.positions[i], Knn{8}, i)) << i;
  }
}

TEST(SpatialIndex, ExhaustivePropertyAcrossSizesAndK) {
  for (std::size_t n : {1u, 2u, 17u, 100u, 1024u}) {
    const auto c = tu::random_cloud(n, n);
    SpatialIndex index(c);
    Rng rng(n + 1);
    for (int q = 0; q < 20; ++q) {
      const PointId id = static_cast<PointId>(uniform_index(rng, n));
      for (std::size_t k : {1u, 4u, 8u, 16u, 1024u}) {
        ASSERT_EQ(index.query(id, Knn{k}), brute_force(c, c.positions[id], Knn{k}, id));
      }
      const Point3 free{static_cast<float>(uniform01(rng)), 0.1f, -0.3f};
      ASSERT_EQ(index.query(free, Knn{5}), brute_force(c, free, Knn{5}));
      ASSERT_EQ(index.query(free, Fdn{0.3f}), brute_force(c, free, Fdn{0.3f}));
    }
  }
}

TEST(SpatialIndex, DuplicatePointsTieBreakById) {
  PointCloud c;
  for (int i = 0; i < 40; ++i) c.positions.push_back({static_cast<float>(i % 3), 0, 0});
  SpatialIndex index(c);
  for (PointId i = 0; i < c.size(); ++i) {
    ASSERT_EQ(index.query(i, Knn{20}), brute_force(c, c.positions[i], Knn{20}, i));
    ASSERT_EQ(index.query(i, Fdn{1.0f}), brute_force(c, c.positions[i], Fdn{1.0f}, i));
  }
}

TEST(SpatialIndex, FdnNestedUnderIncreasingRadius) {
  const auto c = tu::random_cloud(300, 5);
  SpatialIndex index(c);
  for (PointId i = 0; i < 30; ++i) {
    std::set<PointId> prev;
    for (float r : {0.05f, 0.1f, 0.2f, 0.4f, 0.8f}) {
      const auto ids = index.query(i, Fdn{r});
      std::set<PointId> cur(ids.begin(), ids.end());
      EXPECT_TRUE(std::includes(cur.begin(), cur.end(), prev.begin(), prev.end()));
      prev = std::move(cur);
    }
  }
}

TEST(Normals, PlaneGivesVerticalNormals) {
  const auto c = estimate_normals(tu::plane_cloud(200, 8), 8);
  ASSERT_TRUE(c.normals);
  for (const auto& n : *c.normals) {
    EXPECT_NEAR(std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]), 1.0, 1e-4);
    const double a = tu::angle_deg(n, {0, 0, 1});
    EXPECT_LT(std::min(a, 180 - a), 2.0);
  }
  for (std::size_t i = 0; i < c.size(); i += 17) {
    for (std::size_t j = 0; j < c.size(); j += 13) {
      double a = tu::angle_deg((*c.normals)[i], (*c.normals)[j]);
      EXPECT_LT(std::min(a, 180 - a), 2.0);
    }
  }
}

TEST(Normals, SphereNormalsAreRadial) {
  const auto c = estimate_normals(tu::sphere_cloud(2000, 4), 12);
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double a = tu::angle_deg((*c.normals)[i], c.positions[i]);
    ASSERT_LT(std::min(a, 180 - a), 10.0) << i;
  }
}

TEST(Normals, InvalidParameters) {
  const auto c = tu::plane_cloud(10, 1);
  EXPECT_THROW(estimate_normals(c, 2), InvalidParameter);
  EXPECT_THROW(estimate_normals(c, 10), InvalidParameter);
}
