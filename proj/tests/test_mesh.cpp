#include <qmctumor/mesh.hpp>

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <sstream>

using namespace qmctumor;

TEST(Mesh, StructuredCounts) {
  const auto m = generate_structured(100.0, 25);
  EXPECT_EQ(m.num_nodes(), 676u);
  EXPECT_EQ(m.num_triangles(), 1250u);
  EXPECT_NEAR(m.domain_area(), 10000.0, 1e-12 * 10000.0);
}

TEST(Mesh, SingleCell) {
  const auto m = generate_structured(100.0, 1);
  EXPECT_EQ(m.num_nodes(), 4u);
  EXPECT_EQ(m.num_triangles(), 2u);
  EXPECT_DOUBLE_EQ(m.domain_area(), 10000.0);
}

TEST(Mesh, UnitSquareAreaSum) {
  const auto m = generate_structured(1.0, 2);
  double sum = 0.0;
  for (std::size_t t = 0; t < m.num_triangles(); ++t) sum += m.area(t);
  EXPECT_NEAR(sum, 1.0, 1e-15);
}

TEST(Mesh, StructuredDiagonalLowerLeftToUpperRight) {
  const auto m = generate_structured(1.0, 1);
  // Nodes 0 (0,0) and 3 (1,1) must be shared by both triangles.
  for (const auto& tri : m.triangles()) {
    int hits = 0;
    for (int v : tri) hits += (v == 0 || v == 3);
    EXPECT_EQ(hits, 2);
  }
}

TEST(Mesh, AllTrianglesCounterClockwise) {
  const auto m = generate_structured(3.0, 7);
  for (const auto& tri : m.triangles()) EXPECT_GT(m.signed_area(tri), 0.0);
}

TEST(Mesh, StructuredRejectsBadArguments) {
  EXPECT_THROW(generate_structured(0.0, 4), InvalidArgument);
  EXPECT_THROW(generate_structured(-1.0, 4), InvalidArgument);
  EXPECT_THROW(generate_structured(1.0, 0), InvalidArgument);
}

TEST(MeshIO, UnitRightTriangle) {
  std::istringstream in("3 1\n0 0\n1 0\n0 1\n0 1 2\n");
  const auto m = read_mesh(in);
  EXPECT_EQ(m.num_nodes(), 3u);
  EXPECT_EQ(m.num_triangles(), 1u);
  EXPECT_DOUBLE_EQ(m.domain_area(), 0.5);
}

TEST(MeshIO, CommentsAreSkipped) {
  std::istringstream in("# header\n3 1\n0 0\n# between\n1 0\n0 1\n0 1 2\n");
  EXPECT_EQ(read_mesh(in).num_nodes(), 3u);
}

TEST(MeshIO, ClockwiseTriangleIsReoriented) {
  std::istringstream in("3 1\n0 0\n1 0\n0 1\n0 2 1\n");
  const auto m = read_mesh(in);
  EXPECT_GT(m.signed_area(m.triangles()[0]), 0.0);
  EXPECT_DOUBLE_EQ(m.domain_area(), 0.5);
}

TEST(MeshIO, IndexOutOfRangeIsValidationError) {
  std::istringstream in("3 1\n0 0\n1 0\n0 1\n0 1 7\n");
  EXPECT_THROW(read_mesh(in), ValidationError);
}

TEST(MeshIO, DegenerateTriangleIsValidationError) {
  std::istringstream in("3 1\n0 0\n1 0\n2 0\n0 1 2\n");
  EXPECT_THROW(read_mesh(in), ValidationError);
}

TEST(MeshIO, ParseErrorsCarryLineNumbers) {
  {
    std::istringstream in("3 1\n0 0\n1 x\n0 1\n0 1 2\n");
    try {
      read_mesh(in);
      FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
      EXPECT_EQ(e.line(), 3u);
    }
  }
  {
    std::istringstream in("3 1\n0 0\n1 0\n");
    EXPECT_THROW(read_mesh(in), FormatError);
  }
  {
    std::istringstream in("three one\n");
    try {
      read_mesh(in);
      FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
      EXPECT_EQ(e.line(), 1u);
    }
  }
  {
    std::istringstream in("3 1\n0 0\n1 0\n0 1\n0 1 2\n0 0\n");
    EXPECT_THROW(read_mesh(in), FormatError);
  }
}

TEST(MeshIO, RoundTripIsBitExact) {
  std::vector<Point> nodes = {{0.1, 0.2}, {1.0 / 3.0, 0.0}, {0.0, 2.0 / 7.0}, {1e-17, 12345.678}};
  const Mesh m(nodes, {{0, 1, 2}, {1, 3, 2}});
  const auto path = std::filesystem::temp_directory_path() / "qmctumor_mesh_roundtrip.txt";
  save_mesh(path.string(), m);
  const auto back = load_mesh(path.string());
  std::filesystem::remove(path);
  ASSERT_EQ(back.num_nodes(), m.num_nodes());
  for (std::size_t i = 0; i < m.num_nodes(); ++i) {
    EXPECT_EQ(back.nodes()[i].x, m.nodes()[i].x);
    EXPECT_EQ(back.nodes()[i].y, m.nodes()[i].y);
  }
  EXPECT_EQ(back.triangles(), m.triangles());
}

TEST(MeshIO, MissingFile) {
  EXPECT_THROW(load_mesh("/nonexistent/mesh.txt"), ValidationError);
}

TEST(Mesh, BasisGradientsSumToZero) {
  const auto m = generate_structured(2.0, 3);
  for (std::size_t t = 0; t < m.num_triangles(); ++t) {
    const auto g = m.basis_gradients(t);
    EXPECT_NEAR(g[0].x + g[1].x + g[2].x, 0.0, 1e-14);
    EXPECT_NEAR(g[0].y + g[1].y + g[2].y, 0.0, 1e-14);
  }
}
