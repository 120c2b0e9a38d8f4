#include <qmctumor/random_fields.hpp>

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

using namespace qmctumor;

namespace {

std::vector<double> zeros(std::size_t s) { return std::vector<double>(s, 0.0); }

// Dense oracle: A phi = nu M phi  =>  Gamma phi = nu^-2 phi.
Eigen::VectorXd dense_covariance_eigenvalues(const Mesh& mesh, const CovarianceSpec& spec) {
  const Eigen::MatrixXd M(assemble_mass(mesh));
  const Eigen::MatrixXd K(assemble_stiffness(mesh, 1.0));
  const Eigen::MatrixXd A = spec.gamma * K + spec.delta * M;
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(A, M);
  Eigen::VectorXd mu = ges.eigenvalues().array().pow(-2.0);
  std::sort(mu.data(), mu.data() + mu.size(), std::greater<>());
  return mu;
}

} // namespace

TEST(UniformModel, MeanFieldAtZero) {
  const UniformAffineModel m(0.05, 0.3, 2.0, 16, 100.0);
  const auto [a, k] = eval_uniform(m, zeros(16), {37.0, 12.0});
  EXPECT_DOUBLE_EQ(a, 0.05);
  EXPECT_DOUBLE_EQ(k, 0.3);
}

TEST(UniformModel, FirstModeAtCenter) {
  const UniformAffineModel m(0.05, 0.3, 2.0, 16, 100.0);
  auto y = zeros(16);
  y[0] = 0.5;
  EXPECT_NEAR(eval_uniform(m, y, {50, 50}).first, 0.0625, 1e-15);
  y[0] = -0.5;
  EXPECT_NEAR(eval_uniform(m, y, {50, 50}).first, 0.0375, 1e-15);
  EXPECT_DOUBLE_EQ(eval_uniform(m, y, {50, 50}).second, 0.3);
}

TEST(UniformModel, OutOfCubeRejected) {
  const UniformAffineModel m(0.05, 0.3, 2.0, 4, 100.0);
  EXPECT_THROW(eval_uniform(m, std::vector<double>{0.6, 0, 0, 0}, {1, 1}), InvalidArgument);
  EXPECT_THROW(eval_uniform(m, std::vector<double>{0, 0, 0}, {1, 1}), InvalidArgument);
  EXPECT_THROW(UniformAffineModel(0.05, 0.3, 2.0, 3, 100.0), InvalidArgument);
  EXPECT_THROW(UniformAffineModel(0.05, 0.3, 1.0, 4, 100.0), InvalidArgument);
}

TEST(UniformModel, CertifiedBoundsHoldOnRandomProbes) {
  const UniformAffineModel m(0.05, 0.3, 2.0, 16, 100.0);
  double partial = 0.0;
  for (int k = 1; k <= 8; ++k) partial += 1.0 / (k * k);
  EXPECT_NEAR(m.a_min(), 0.05 * (1.0 - 0.25 * partial), 1e-16);
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> uy(-0.5, 0.5), ux(0.0, 100.0);
  double amin = 1e9, kmin = 1e9;
  for (int probe = 0; probe < 10000; ++probe) {
    std::vector<double> y(16);
    for (auto& v : y) v = uy(gen);
    const auto [a, k] = m.eval(y, {ux(gen), ux(gen)});
    amin = std::min(amin, a);
    kmin = std::min(kmin, k);
    EXPECT_LE(a, m.a_max());
    EXPECT_LE(k, m.kappa_max());
  }
  EXPECT_GE(amin, m.a_min());
  EXPECT_GE(kmin, m.kappa_min());
  EXPECT_GT(m.a_min(), 0.0);
}

TEST(UniformModel, InterleavingIndependence) {
  const UniformAffineModel m(0.05, 0.3, 2.0, 8, 100.0);
  std::vector<double> y = {0.1, -0.2, 0.3, 0.05, -0.4, 0.2, 0.0, 0.45};
  const Point x{31.0, 77.0};
  const auto base = m.eval(y, x);
  auto odd = y;
  for (std::size_t j = 0; j < odd.size(); j += 2) odd[j] = -odd[j] * 0.5;
  EXPECT_EQ(m.eval(odd, x).second, base.second);
  EXPECT_NE(m.eval(odd, x).first, base.first);
  auto even = y;
  for (std::size_t j = 1; j < even.size(); j += 2) even[j] = -0.5 * even[j] + 0.1;
  EXPECT_EQ(m.eval(even, x).first, base.first);
  EXPECT_NE(m.eval(even, x).second, base.second);
}

TEST(UniformModel, SamplerMatchesPointwiseEvaluation) {
  const auto mesh = generate_structured(100.0, 6);
  const UniformAffineModel m(0.05, 0.3, 2.0, 10, 100.0);
  const UniformFieldSampler sampler(m, mesh);
  const std::vector<double> y = {0.1, -0.2, 0.3, 0.05, -0.4, 0.2, 0.0, 0.45, -0.5, 0.5};
  const auto c = sampler.sample(y);
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    for (int q = 0; q < kQuadPoints; ++q) {
      const auto [a, k] = m.eval(y, quadrature_point(mesh, t, q));
      EXPECT_NEAR(c.diffusion[3 * t + q], a, 1e-15);
      EXPECT_NEAR(c.proliferation[3 * t + q], k, 1e-15);
    }
  }
}

TEST(UniformModel, BetaSequence) {
  const UniformAffineModel m(0.05, 0.3, 2.0, 8, 100.0);
  EXPECT_DOUBLE_EQ(m.beta(1), 0.025);
  EXPECT_DOUBLE_EQ(m.beta(2), 0.15);
  EXPECT_DOUBLE_EQ(m.beta(3), 0.05 * 0.5 / 4.0);
}

TEST(Calibration, PaperValuesConstructible) {
  const auto s = calibrate_covariance(180.0, 0.2336);
  EXPECT_GT(s.gamma, 0.0);
  EXPECT_GT(s.delta, 0.0);
  // whole-plane Matern variance 1/(4 pi gamma delta) and rho = sqrt(8 gamma/delta)
  EXPECT_NEAR(1.0 / (4.0 * std::numbers::pi * s.gamma * s.delta), 0.2336, 1e-12);
  EXPECT_NEAR(std::sqrt(8.0 * s.gamma / s.delta), 180.0, 1e-9);
  EXPECT_THROW(calibrate_covariance(0.0, 1.0), InvalidArgument);
  EXPECT_THROW(calibrate_covariance(1.0, -1.0), InvalidArgument);
}

TEST(Calibration, RatioGrowsWithCorrelationLength) {
  double prev = 0.0;
  for (double rho : {10.0, 100.0, 1000.0}) {
    const auto s = calibrate_covariance(rho, 0.5);
    EXPECT_GT(s.gamma / s.delta, prev);
    prev = s.gamma / s.delta;
  }
}

TEST(Calibration, DoublingVarianceDoublesSampledVariance) {
  const auto mesh = generate_structured(100.0, 10);
  const auto m1 = compute_kl(mesh, calibrate_covariance(180.0, 0.1), 10);
  const auto m2 = compute_kl(mesh, calibrate_covariance(180.0, 0.2), 10);
  const LognormalKLModel f1(0.05, 0.3, m1, m1, 20), f2(0.05, 0.3, m2, m2, 20);
  std::mt19937_64 gen(11);
  std::normal_distribution<double> nd;
  const std::size_t node = 37;
  double s1 = 0, ss1 = 0, s2 = 0, ss2 = 0;
  const int n = 10000;
  for (int k = 0; k < n; ++k) {
    std::vector<double> y(20);
    for (auto& v : y) v = nd(gen);
    const double z1 = f1.gaussian_fields(y).first[node];
    const double z2 = f2.gaussian_fields(y).first[node];
    s1 += z1;
    ss1 += z1 * z1;
    s2 += z2;
    ss2 += z2 * z2;
  }
  const double v1 = ss1 / n - (s1 / n) * (s1 / n);
  const double v2 = ss2 / n - (s2 / n) * (s2 / n);
  EXPECT_NEAR(v2 / v1, 2.0, 0.2);
}

TEST(KL, ConstantModeIsDeltaInverseSquared) {
  const auto mesh = generate_structured(10.0, 8);
  CovarianceSpec spec;
  spec.gamma = 2.0;
  spec.delta = 0.5;
  const auto modes = compute_kl(mesh, spec, 5);
  // slow spectral decay here, so the randomized solve is only accurate to ~1e-8
  EXPECT_NEAR(modes.eigenvalues[0], 4.0, 4.0 * 1e-6);
  // constant M-normalized mode: 1/sqrt(area), up to sign
  const double sign = modes.eigenvectors(0, 0) > 0 ? 1.0 : -1.0;
  EXPECT_NEAR(sign * modes.eigenvectors.col(0).minCoeff(), 0.1, 1e-3);
  EXPECT_NEAR(sign * modes.eigenvectors.col(0).maxCoeff(), 0.1, 1e-3);
}

TEST(KL, NeumannCosineMode) {
  const auto mesh = generate_structured(std::numbers::pi, 32);
  CovarianceSpec spec;
  spec.gamma = 1.0;
  spec.delta = 1.0;
  const auto modes = compute_kl(mesh, spec, 6);
  EXPECT_NEAR(modes.eigenvalues[0], 1.0, 1e-9);
  // cos(x1) and cos(x2) share the eigenvalue (1 + 1)^-2.
  EXPECT_NEAR(modes.eigenvalues[1], 0.25, 0.25 * 0.01);
  EXPECT_NEAR(modes.eigenvalues[2], 0.25, 0.25 * 0.01);
}

TEST(KL, MatchesDenseEigensolve) {
  const auto mesh = generate_structured(100.0, 10);
  const auto spec = calibrate_covariance(180.0, 0.2336);
  const auto modes = compute_kl(mesh, spec, 10);
  const auto dense = dense_covariance_eigenvalues(mesh, spec);
  for (int k = 0; k < 10; ++k) {
    EXPECT_NEAR(modes.eigenvalues[k], dense[k], 0.01 * dense[k]) << "mode " << k;
  }
}

TEST(KL, MatchesDenseEigensolveShortCorrelation) {
  const auto mesh = generate_structured(100.0, 10);
  const auto spec = calibrate_covariance(30.0, 1.0);
  const auto modes = compute_kl(mesh, spec, 10);
  const auto dense = dense_covariance_eigenvalues(mesh, spec);
  for (int k = 0; k < 10; ++k) {
    EXPECT_NEAR(modes.eigenvalues[k], dense[k], 0.01 * dense[k]) << "mode " << k;
  }
}

TEST(KL, OrthonormalSortedAndDecaying) {
  const auto mesh = generate_structured(100.0, 10);
  const auto modes = compute_kl(mesh, calibrate_covariance(180.0, 0.2336), 20);
  EXPECT_LT(m_orthonormality_error(modes, mesh), 1e-8);
  for (Eigen::Index k = 1; k < modes.eigenvalues.size(); ++k) {
    EXPECT_LE(modes.eigenvalues[k], modes.eigenvalues[k - 1]);
  }
  EXPECT_LT(spectral_decay_slope(modes.eigenvalues), 0.0);
}

TEST(KL, DeterministicForSeed) {
  const auto mesh = generate_structured(100.0, 6);
  const auto spec = calibrate_covariance(50.0, 1.0);
  const auto a = compute_kl(mesh, spec, 5, 10, 42);
  const auto b = compute_kl(mesh, spec, 5, 10, 42);
  EXPECT_EQ(a.eigenvalues, b.eigenvalues);
  EXPECT_EQ(a.eigenvectors, b.eigenvectors);
}

TEST(KL, TooManyModesRejected) {
  const auto mesh = generate_structured(100.0, 2);
  EXPECT_THROW(compute_kl(mesh, calibrate_covariance(50.0, 1.0), 5, 10), InvalidArgument);
}

TEST(KL, CacheRoundTripIsBitExact) {
  const auto mesh = generate_structured(100.0, 10);
  const auto modes = compute_kl(mesh, calibrate_covariance(180.0, 0.2336), 20, 10, 9);
  std::stringstream ss;
  write_kl_cache(ss, modes);
  const auto back = read_kl_cache(ss);
  EXPECT_EQ(back.eigenvalues, modes.eigenvalues);
  EXPECT_EQ(back.eigenvectors, modes.eigenvectors);
  EXPECT_EQ(back.gamma, modes.gamma);
  EXPECT_EQ(back.delta, modes.delta);
  EXPECT_EQ(back.seed, 9u);
  EXPECT_LT(m_orthonormality_error(back, mesh), 1e-8);

  const LognormalKLModel f1(0.05, 0.3, modes, modes, 16), f2(0.05, 0.3, back, back, 16);
  std::vector<double> y(16);
  for (std::size_t j = 0; j < y.size(); ++j) y[j] = std::sin(1.0 + j);
  const auto c1 = f1.sample(mesh, y), c2 = f2.sample(mesh, y);
  EXPECT_EQ(c1.diffusion, c2.diffusion);
  EXPECT_EQ(c1.proliferation, c2.proliferation);
}

TEST(KL, TruncatedCacheIsFormatError) {
  std::istringstream in("2 3 1 1 1\n0.5 0.25\n1 2 3\n4 5\n");
  EXPECT_THROW(read_kl_cache(in), FormatError);
  std::istringstream bad("2 3 1 1 1\n0.5 x\n");
  EXPECT_THROW(read_kl_cache(bad), FormatError);
}

TEST(Lognormal, ZeroParametersGiveMeanPlusOne) {
  const auto mesh = generate_structured(100.0, 6);
  const auto modes = compute_kl(mesh, calibrate_covariance(180.0, 0.2336), 4);
  const LognormalKLModel m(0.05, 0.3, modes, modes, 8);
  const auto [a, k] = eval_lognormal(m, mesh, zeros(8), {33.0, 71.0});
  EXPECT_DOUBLE_EQ(a, 1.05);
  EXPECT_DOUBLE_EQ(k, 1.3);
}

TEST(Lognormal, SingleActiveMode) {
  const auto mesh = generate_structured(100.0, 6);
  const auto ma = compute_kl(mesh, calibrate_covariance(180.0, 0.2336), 4);
  const auto mk = compute_kl(mesh, calibrate_covariance(180.0, 0.0682), 4);
  const LognormalKLModel m(0.05, 0.3, ma, mk, 8);
  auto y = zeros(8);
  y[0] = 1.0;
  for (std::size_t i : {0u, 10u, 24u}) {
    const auto [a, k] = m.eval_node(y, i);
    EXPECT_NEAR(a, 0.05 + std::exp(std::sqrt(ma.eigenvalues[0]) * ma.eigenvectors(i, 0)), 1e-14);
    EXPECT_DOUBLE_EQ(k, 1.3);
  }
  // point evaluation at a node agrees with the nodal value
  const auto p = eval_lognormal(m, mesh, y, mesh.nodes()[10]);
  EXPECT_NEAR(p.first, m.eval_node(y, 10).first, 1e-14);
}

TEST(Lognormal, InterleavingIndependence) {
  const auto mesh = generate_structured(100.0, 6);
  const auto modes = compute_kl(mesh, calibrate_covariance(180.0, 0.2336), 4);
  const LognormalKLModel m(0.05, 0.3, modes, modes, 8);
  std::vector<double> y = {0.3, -1.2, 0.7, 2.0, -0.4, 0.1, 1.5, -0.9};
  auto odd = y;
  odd[0] = 3.0;
  odd[4] = -2.0;
  for (std::size_t i = 0; i < mesh.num_nodes(); ++i) {
    EXPECT_EQ(m.eval_node(odd, i).second, m.eval_node(y, i).second);
  }
}

TEST(Lognormal, MonteCarloVarianceOfGaussianField) {
  const auto mesh = generate_structured(100.0, 10);
  const auto modes = compute_kl(mesh, calibrate_covariance(180.0, 0.2336), 8);
  const LognormalKLModel m(0.05, 0.3, modes, modes, 16);
  const std::size_t node = 52;
  double expected = 0.0;
  for (int k = 0; k < 8; ++k) {
    expected += modes.eigenvalues[k] * modes.eigenvectors(node, k) * modes.eigenvectors(node, k);
  }
  std::mt19937_64 gen(5);
  std::normal_distribution<double> nd;
  const int n = 10000;
  double s = 0, ss = 0;
  for (int k = 0; k < n; ++k) {
    std::vector<double> y(16);
    for (auto& v : y) v = nd(gen);
    const double z = m.gaussian_fields(y).first[node];
    s += z;
    ss += z * z;
  }
  const double var = ss / n - (s / n) * (s / n);
  EXPECT_NEAR(var, expected, 0.05 * expected);
}

TEST(Lognormal, Validation) {
  const auto mesh = generate_structured(100.0, 6);
  const auto modes = compute_kl(mesh, calibrate_covariance(180.0, 0.2336), 4);
  EXPECT_THROW(LognormalKLModel(0.05, 0.3, modes, modes, 10), InvalidArgument);
  EXPECT_THROW(LognormalKLModel(0.05, 0.3, modes, modes, 7), InvalidArgument);
  const LognormalKLModel m(0.05, 0.3, modes, modes, 8);
  EXPECT_THROW(m.gaussian_fields(zeros(6)), InvalidArgument);
  auto y = zeros(8);
  y[3] = std::nan("");
  EXPECT_THROW(m.gaussian_fields(y), InvalidArgument);
  const auto other = generate_structured(100.0, 5);
  EXPECT_THROW(m.sample(other, zeros(8)), InvalidArgument);
}
