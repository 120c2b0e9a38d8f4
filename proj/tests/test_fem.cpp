#include <qmctumor/fem.hpp>

#include <gtest/gtest.h>

#include <Eigen/SparseCholesky>

#include <cmath>
#include <numbers>

using namespace qmctumor;

namespace {

Mesh unit_right_triangle() { return Mesh({{0, 0}, {1, 0}, {0, 1}}, {{0, 1, 2}}); }

Eigen::MatrixXd dense(const SparseMatrix& m) { return Eigen::MatrixXd(m); }

double max_asymmetry(const SparseMatrix& m) {
  const Eigen::MatrixXd d = dense(m);
  return (d - d.transpose()).cwiseAbs().maxCoeff();
}

} // namespace

TEST(Quadrature, WeightsSumToOne) {
  const auto& r = mid_edge_rule();
  double s = 0.0;
  for (double w : r.weights) s += w;
  EXPECT_DOUBLE_EQ(s, 1.0);
  for (const auto& p : r.points) EXPECT_DOUBLE_EQ(p[0] + p[1] + p[2], 1.0);
}

TEST(Quadrature, ExactForQuadraticsOnReferenceTriangle) {
  const auto m = unit_right_triangle();
  // Analytic integrals over the unit right triangle.
  struct Case {
    double (*f)(Point);
    double exact;
  };
  const Case cases[] = {
      {[](Point) { return 1.0; }, 0.5},
      {[](Point p) { return p.x; }, 1.0 / 6.0},
      {[](Point p) { return p.x * p.x; }, 1.0 / 12.0},
      {[](Point p) { return p.x * p.y; }, 1.0 / 24.0},
      {[](Point p) { return p.y * p.y + 3.0 * p.x - 2.0; }, 1.0 / 12.0 + 0.5 - 1.0},
  };
  for (const auto& c : cases) {
    const auto v = sample_at_quadrature(m, c.f);
    double integral = 0.0;
    for (int q = 0; q < kQuadPoints; ++q) integral += mid_edge_rule().weights[q] * v[q];
    integral *= m.area(0);
    EXPECT_NEAR(integral, c.exact, 1e-15);
  }
}

TEST(Mass, LocalMatrixOnUnitRightTriangle) {
  const auto M = dense(assemble_mass(unit_right_triangle()));
  Eigen::Matrix3d expected;
  expected << 2, 1, 1, 1, 2, 1, 1, 1, 2;
  expected /= 24.0;
  EXPECT_LT((M - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Mass, TotalEqualsArea) {
  const auto M = assemble_mass(generate_structured(100.0, 25));
  EXPECT_NEAR(dense(M).sum(), 10000.0, 1e-8);
}

TEST(Mass, SymmetricPositiveDefinite) {
  const auto M = assemble_mass(generate_structured(3.0, 5));
  EXPECT_LT(max_asymmetry(M), 1e-12 * dense(M).cwiseAbs().maxCoeff());
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> llt{Eigen::SparseMatrix<double>(M)};
  EXPECT_EQ(llt.info(), Eigen::Success);
}

TEST(Mass, LumpedDiagonalIsRowSum) {
  const auto mesh = generate_structured(2.0, 4);
  const auto M = assemble_mass(mesh);
  const auto d = lump(M);
  const Eigen::VectorXd rows = dense(M).rowwise().sum();
  EXPECT_LT((d - rows).cwiseAbs().maxCoeff(), 1e-14);
  const P1Pattern pattern(mesh);
  std::vector<double> values(pattern.nnz(), 0.0);
  add_weighted_mass(pattern, QuadratureValues(3 * mesh.num_triangles(), 1.0), values);
  std::vector<double> out(mesh.num_nodes());
  lump_values(pattern, values, out);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], d[i], 1e-14);
}

TEST(Stiffness, LocalMatrixOnUnitRightTriangle) {
  const auto K = dense(assemble_stiffness(unit_right_triangle(), 1.0));
  Eigen::Matrix3d expected;
  expected << 2, -1, -1, -1, 1, 0, -1, 0, 1;
  expected *= 0.5;
  EXPECT_LT((K - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Stiffness, QuadraticCoefficientIsIntegratedExactly) {
  // integral of 1 + x^2 + xy over the unit right triangle = 15/24
  const auto K = dense(
      assemble_stiffness(unit_right_triangle(), [](Point p) { return 1 + p.x * p.x + p.x * p.y; }));
  Eigen::Matrix3d expected;
  expected << 2, -1, -1, -1, 1, 0, -1, 0, 1;
  expected *= 0.625;
  EXPECT_LT((K - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Stiffness, LinearInCoefficient) {
  const auto mesh = generate_structured(1.0, 3);
  const auto K1 = dense(assemble_stiffness(mesh, 1.0));
  const auto K2 = dense(assemble_stiffness(mesh, 2.0));
  EXPECT_LT((K2 - 2.0 * K1).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Stiffness, ConstantsInKernel) {
  const auto mesh = generate_structured(100.0, 4);
  const auto K = assemble_stiffness(mesh, [](Point p) { return 0.05 + 1e-4 * p.x; });
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(K.rows());
  EXPECT_LT((K * ones).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT(max_asymmetry(K), 1e-12 * dense(K).cwiseAbs().maxCoeff());
}

TEST(Stiffness, PositiveSemiDefinite) {
  const auto K = dense(assemble_stiffness(generate_structured(1.0, 4), 0.7));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(K);
  EXPECT_GT(es.eigenvalues().minCoeff(), -1e-12);
  EXPECT_NEAR(es.eigenvalues()[0], 0.0, 1e-12);
  EXPECT_GT(es.eigenvalues()[1], 1e-6);
}

TEST(Stiffness, NonPositiveCoefficientIsRejected) {
  const auto mesh = generate_structured(1.0, 2);
  EXPECT_THROW(assemble_stiffness(mesh, 0.0), CoefficientBoundError);
  EXPECT_THROW(assemble_stiffness(mesh, [](Point p) { return p.x - 0.5; }),
               CoefficientBoundError);
  EXPECT_THROW(assemble_stiffness(mesh, std::nan("")), CoefficientBoundError);
}

TEST(WeightedMass, UnitWeightEqualsMass) {
  const auto mesh = generate_structured(5.0, 6);
  const auto a = dense(assemble_weighted_mass(mesh, [](Point) { return 1.0; }));
  const auto b = dense(assemble_mass(mesh));
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(WeightedMass, ZeroWeightIsZero) {
  const auto a = dense(assemble_weighted_mass(generate_structured(5.0, 6), 0.0));
  EXPECT_EQ(a.cwiseAbs().maxCoeff(), 0.0);
}

TEST(WeightedMass, ConstantWeightScalesTotal) {
  const auto a = dense(assemble_weighted_mass(generate_structured(100.0, 25), 0.3));
  EXPECT_NEAR(a.sum(), 3000.0, 1e-8);
}

TEST(WeightedMass, VariableWeightSymmetric) {
  const auto a =
      assemble_weighted_mass(generate_structured(1.0, 5), [](Point p) { return std::sin(7 * p.x) + p.y; });
  EXPECT_LT(max_asymmetry(a), 1e-12);
}

TEST(Pattern, SortedUniqueColumnsAndDiagonal) {
  const auto mesh = generate_structured(1.0, 4);
  const P1Pattern p(mesh);
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (int k = p.row_offsets()[i] + 1; k < p.row_offsets()[i + 1]; ++k) {
      EXPECT_LT(p.col_indices()[k - 1], p.col_indices()[k]);
    }
    EXPECT_EQ(p.col_indices()[p.diagonal_positions()[i]], static_cast<int>(i));
    EXPECT_EQ(p.row_of_entry()[p.diagonal_positions()[i]], static_cast<int>(i));
  }
}

TEST(Interpolation, LinearFieldIsReproduced) {
  const auto mesh = generate_structured(2.0, 3);
  std::vector<double> nodal;
  for (const auto& p : mesh.nodes()) nodal.push_back(1.0 + 2.0 * p.x - p.y);
  const auto v = interpolate_at_quadrature(mesh, nodal);
  const auto exact = sample_at_quadrature(mesh, [](Point p) { return 1.0 + 2.0 * p.x - p.y; });
  for (std::size_t k = 0; k < v.size(); ++k) EXPECT_NEAR(v[k], exact[k], 1e-14);
}

// Neumann problem -Laplace u + u = f with u = cos(pi x) cos(pi y) on the unit
// square: the Galerkin solution converges at second order in the L2 norm.
TEST(Assembly, ManufacturedEllipticSolveConvergesSecondOrder) {
  const double pi = std::numbers::pi;
  auto u = [&](Point p) { return std::cos(pi * p.x) * std::cos(pi * p.y); };
  std::vector<double> errors;
  for (int n : {8, 16, 32}) {
    const auto mesh = generate_structured(1.0, n);
    const Eigen::SparseMatrix<double> K(assemble_stiffness(mesh, 1.0));
    const Eigen::SparseMatrix<double> M(assemble_mass(mesh));
    Eigen::VectorXd ui(mesh.num_nodes());
    for (std::size_t i = 0; i < mesh.num_nodes(); ++i) ui[i] = u(mesh.nodes()[i]);
    const Eigen::VectorXd load = M * ((2.0 * pi * pi + 1.0) * ui);
    const Eigen::SparseMatrix<double> A = K + M;
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(A);
    const Eigen::VectorXd err = ldlt.solve(load) - ui;
    errors.push_back(std::sqrt(err.dot(M * err)));
  }
  EXPECT_GT(std::log2(errors[0] / errors[1]), 1.8) << errors[0] << " " << errors[1];
  EXPECT_GT(std::log2(errors[1] / errors[2]), 1.8) << errors[1] << " " << errors[2];
}
