#ifndef QMCTUMOR_RANDOM_FIELDS_HPP
#define QMCTUMOR_RANDOM_FIELDS_HPP

// Parametric coefficient models for the diffusion a(x) and proliferation
// kappa(x) fields. Parameters are interleaved: odd coordinates y_1, y_3, ...
// drive a, even coordinates y_2, y_4, ... drive kappa.
//
//   uniform:    a = a0 + sum_k y_{2k-1} a0/2 k^-nu sin(k pi x1/L) sin(k pi x2/L),  y in [-1/2, 1/2]^s
//   lognormal:  a = a0 + exp(sum_k y_{2k-1} sqrt(mu_k) phi_k(x)),                y in R^s
//
// with kappa analogous. The lognormal modes are the leading eigenpairs of the
// covariance (-gamma Laplace + delta)^-2 under homogeneous Neumann conditions.

#include <qmctumor/errors.hpp>
#include <qmctumor/fem.hpp>
#include <qmctumor/lattice.hpp>
#include <qmctumor/mesh.hpp>
#include <qmctumor/normal.hpp>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace qmctumor {

/// Coefficient samples of one parameter vector at the mesh quadrature points.
struct CoefficientSample {
  QuadratureValues diffusion;
  QuadratureValues proliferation;
};

// ---------------------------------------------------------------------------
// Uniform affine model

class UniformAffineModel {
public:
  UniformAffineModel(double a0, double kappa0, double decay_nu, std::size_t s, double length)
      : a0_(a0), kappa0_(kappa0), nu_(decay_nu), s_(s), length_(length) {
    if (s_ % 2 != 0) throw InvalidArgument("uniform model: s must be even");
    if (!(nu_ > 1.0)) throw InvalidArgument("uniform model: decay exponent must exceed 1");
    if (!(length_ > 0.0)) throw InvalidArgument("uniform model: length must be positive");
    if (!(a0_ > 0.0) || !(kappa0_ >= 0.0)) {
      throw InvalidArgument("uniform model: mean fields must be positive");
    }
    partial_ = 0.0;
    for (std::size_t k = 1; k <= s_ / 2; ++k) partial_ += std::pow(static_cast<double>(k), -nu_);
    if (!(a_min() > 0.0)) throw InvalidArgument("uniform model: a_min is not positive");
  }

  double a0() const noexcept { return a0_; }
  double kappa0() const noexcept { return kappa0_; }
  double decay() const noexcept { return nu_; }
  std::size_t dimension() const noexcept { return s_; }
  double length() const noexcept { return length_; }

  // Certified bounds: a0 (1 -/+ 1/4 sum_k k^-nu).
  double a_min() const noexcept { return a0_ * (1.0 - 0.25 * partial_); }
  double a_max() const noexcept { return a0_ * (1.0 + 0.25 * partial_); }
  double kappa_min() const noexcept { return kappa0_ * (1.0 - 0.25 * partial_); }
  double kappa_max() const noexcept { return kappa0_ * (1.0 + 0.25 * partial_); }

  /// Sup-norm of the j-th fluctuation (1-based), the beta_j sequence.
  double beta(std::size_t j) const {
    const double k = static_cast<double>((j + 1) / 2);
    const double base = (j % 2 == 1) ? a0_ : kappa0_;
    return base * 0.5 * std::pow(k, -nu_);
  }

  void check_parameters(std::span<const double> y) const {
    if (y.size() != s_) {
      throw InvalidArgument("uniform model expects " + std::to_string(s_) + " parameters, got " +
                            std::to_string(y.size()));
    }
    for (std::size_t j = 0; j < y.size(); ++j) {
      if (!(std::abs(y[j]) <= 0.5)) {
        throw InvalidArgument("parameter y_" + std::to_string(j + 1) + " = " +
                              std::to_string(y[j]) + " lies outside [-1/2, 1/2]");
      }
    }
  }

  /// (a, kappa) at x.
  std::pair<double, double> eval(std::span<const double> y, Point x) const {
    check_parameters(y);
    double a = a0_, kappa = kappa0_;
    for (std::size_t k = 1; k <= s_ / 2; ++k) {
      const double shape = mode_shape(k, x);
      a += y[2 * k - 2] * a0_ * shape;
      kappa += y[2 * k - 1] * kappa0_ * shape;
    }
    return {a, kappa};
  }

  /// 1/2 k^-nu sin(k pi x1/L) sin(k pi x2/L).
  double mode_shape(std::size_t k, Point x) const {
    const double kk = static_cast<double>(k);
    return 0.5 * std::pow(kk, -nu_) * std::sin(kk * std::numbers::pi * x.x / length_) *
           std::sin(kk * std::numbers::pi * x.y / length_);
  }

private:
  double a0_, kappa0_, nu_;
  std::size_t s_;
  double length_;
  double partial_ = 0.0;
};

/// Mode shapes of a uniform model tabulated at the quadrature points of a mesh.
class UniformFieldSampler {
public:
  UniformFieldSampler(const UniformAffineModel& model, const Mesh& mesh) : model_(model) {
    nq_ = kQuadPoints * mesh.num_triangles();
    const std::size_t modes = model.dimension() / 2;
    table_.resize(modes * nq_);
    for (std::size_t k = 1; k <= modes; ++k) {
      for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
        for (int q = 0; q < kQuadPoints; ++q) {
          table_[(k - 1) * nq_ + kQuadPoints * t + q] =
              model.mode_shape(k, quadrature_point(mesh, t, q));
        }
      }
    }
  }

  const UniformAffineModel& model() const noexcept { return model_; }

  CoefficientSample sample(std::span<const double> y) const {
    model_.check_parameters(y);
    CoefficientSample out{QuadratureValues(nq_, model_.a0()),
                          QuadratureValues(nq_, model_.kappa0())};
    for (std::size_t k = 0; k < model_.dimension() / 2; ++k) {
      const double ca = y[2 * k] * model_.a0();
      const double ck = y[2 * k + 1] * model_.kappa0();
      const double* row = table_.data() + k * nq_;
      for (std::size_t i = 0; i < nq_; ++i) {
        out.diffusion[i] += ca * row[i];
        out.proliferation[i] += ck * row[i];
      }
    }
    return out;
  }

private:
  UniformAffineModel model_;
  std::size_t nq_ = 0;
  std::vector<double> table_;
};

inline std::pair<double, double> eval_uniform(const UniformAffineModel& model,
                                              std::span<const double> y, Point x) {
  return model.eval(y, x);
}

// ---------------------------------------------------------------------------
// Covariance operator and KL eigenpairs

struct CovarianceSpec {
  double gamma = 1.0;
  double delta = 1.0;
  int nu = 2; // power of the elliptic operator; only 2 is implemented
  double correlation_length = 0.0; // informational, mm
  double pointwise_variance = 0.0; // informational

  void validate() const {
    if (!(gamma > 0.0) || !(delta > 0.0)) {
      throw InvalidArgument("covariance gamma and delta must be positive");
    }
    if (nu != 2) throw InvalidArgument("covariance power nu must be 2");
  }
};

/// Matern relations for (-gamma Laplace + delta)^-2 in two dimensions
/// (Matern smoothness 1): with k = sqrt(8) / correlation_length,
/// delta = gamma k^2 and whole-plane marginal variance 1 / (4 pi gamma delta).
inline CovarianceSpec calibrate_covariance(double correlation_length, double pointwise_variance) {
  if (!(correlation_length > 0.0) || !(pointwise_variance > 0.0)) {
    throw InvalidArgument("correlation length and variance must be positive");
  }
  const double k = std::sqrt(8.0) / correlation_length;
  const double sigma = std::sqrt(pointwise_variance);
  CovarianceSpec spec;
  spec.gamma = 1.0 / (2.0 * std::sqrt(std::numbers::pi) * k * sigma);
  spec.delta = spec.gamma * k * k;
  spec.correlation_length = correlation_length;
  spec.pointwise_variance = pointwise_variance;
  return spec;
}

/// Leading eigenpairs, eigenvalues descending, eigenvectors M-orthonormal
/// (one column per mode, nodal values).
struct KLModes {
  Eigen::VectorXd eigenvalues;
  Eigen::MatrixXd eigenvectors;
  double gamma = 0.0;
  double delta = 0.0;
  std::uint64_t seed = 0;

  std::size_t num_modes() const noexcept { return static_cast<std::size_t>(eigenvalues.size()); }
  std::size_t num_nodes() const noexcept { return static_cast<std::size_t>(eigenvectors.rows()); }
};

/// Applies the discrete covariance Gamma = A^-1 M A^-1 M, A = gamma K + delta M.
class CovarianceOperator {
public:
  CovarianceOperator(const Mesh& mesh, const CovarianceSpec& spec) {
    spec.validate();
    mass_ = Eigen::SparseMatrix<double>(assemble_mass(mesh));
    const Eigen::SparseMatrix<double> stiff(assemble_stiffness(mesh, 1.0));
    Eigen::SparseMatrix<double> a = spec.gamma * stiff + spec.delta * mass_;
    llt_.compute(a);
    if (llt_.info() != Eigen::Success) {
      throw SingularOperatorError("factorization of the covariance operator failed");
    }
  }

  const Eigen::SparseMatrix<double>& mass() const noexcept { return mass_; }

  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd y = llt_.solve(mass_ * x);
    return llt_.solve(mass_ * y);
  }

private:
  Eigen::SparseMatrix<double> mass_;
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> llt_;
};

namespace detail {

// Modified Gram-Schmidt in the M inner product, two passes.
inline Eigen::MatrixXd m_orthonormalize(const Eigen::MatrixXd& y,
                                        const Eigen::SparseMatrix<double>& mass) {
  Eigen::MatrixXd q = y;
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    for (int pass = 0; pass < 2; ++pass) {
      for (Eigen::Index i = 0; i < j; ++i) {
        const double c = q.col(i).dot(mass * q.col(j));
        q.col(j) -= c * q.col(i);
      }
    }
    const double norm = std::sqrt(q.col(j).dot(mass * q.col(j)));
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      throw NumericalError("M-orthonormalization broke down (rank-deficient sample)");
    }
    q.col(j) /= norm;
  }
  return q;
}

} // namespace detail

/// Randomized double-pass eigensolver for M Gamma phi = mu M phi.
inline KLModes compute_kl(const Mesh& mesh, const CovarianceSpec& spec, std::size_t n_modes,
                          std::size_t oversample = 10, std::uint64_t seed = 1,
                          int power_iterations = 1) {
  spec.validate();
  const std::size_t n = mesh.num_nodes();
  if (n_modes < 1) throw InvalidArgument("compute_kl: need at least one mode");
  if (n_modes + oversample > n) {
    throw InvalidArgument("compute_kl: n_modes + oversample exceeds the node count");
  }
  const CovarianceOperator cov(mesh, spec);
  const auto& mass = cov.mass();
  const auto cols = static_cast<Eigen::Index>(n_modes + oversample);

  Eigen::MatrixXd omega(static_cast<Eigen::Index>(n), cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    KeyedRng rng(seed, 3, static_cast<std::uint64_t>(c));
    for (Eigen::Index r = 0; r < omega.rows(); ++r) {
      double u = rng.uniform();
      if (u == 0.0) u = 0x1.0p-64;
      omega(r, c) = inverse_normal_cdf(u);
    }
  }

  Eigen::MatrixXd y = cov.apply(omega);
  for (int it = 0; it < power_iterations; ++it) {
    y = cov.apply(detail::m_orthonormalize(y, mass));
  }
  const Eigen::MatrixXd q = detail::m_orthonormalize(y, mass);
  const Eigen::MatrixXd mq = mass * q;
  Eigen::MatrixXd t = mq.transpose() * cov.apply(q);
  t = 0.5 * (t + t.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(t);
  if (eig.info() != Eigen::Success) throw NumericalError("projected eigenproblem failed");

  KLModes out;
  out.gamma = spec.gamma;
  out.delta = spec.delta;
  out.seed = seed;
  out.eigenvalues.resize(static_cast<Eigen::Index>(n_modes));
  out.eigenvectors.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n_modes));
  for (std::size_t k = 0; k < n_modes; ++k) {
    const Eigen::Index src = cols - 1 - static_cast<Eigen::Index>(k); // ascending -> descending
    out.eigenvalues[static_cast<Eigen::Index>(k)] = eig.eigenvalues()[src];
    Eigen::VectorXd v = q * eig.eigenvectors().col(src);
    // Fix the sign so the largest-magnitude entry is positive.
    Eigen::Index imax = 0;
    v.cwiseAbs().maxCoeff(&imax);
    if (v[imax] < 0.0) v = -v;
    out.eigenvectors.col(static_cast<Eigen::Index>(k)) = v;
  }
  for (Eigen::Index k = 0; k < out.eigenvalues.size(); ++k) {
    if (!(out.eigenvalues[k] > 0.0)) {
      throw NumericalError("covariance eigenvalue " + std::to_string(k) + " is not positive");
    }
  }
  return out;
}

/// max |phi_i^T M phi_j - delta_ij|.
inline double m_orthonormality_error(const KLModes& modes, const Mesh& mesh) {
  const Eigen::SparseMatrix<double> mass(assemble_mass(mesh));
  const Eigen::MatrixXd g =
      modes.eigenvectors.transpose() * (mass * modes.eigenvectors);
  return (g - Eigen::MatrixXd::Identity(g.rows(), g.cols())).cwiseAbs().maxCoeff();
}

/// Least-squares slope of log sqrt(mu_k) against log k.
inline double spectral_decay_slope(const Eigen::VectorXd& eigenvalues) {
  const auto n = eigenvalues.size();
  if (n < 2) throw InvalidArgument("need at least two eigenvalues for a decay slope");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double x = std::log(static_cast<double>(k + 1));
    const double yv = 0.5 * std::log(eigenvalues[k]);
    sx += x;
    sy += yv;
    sxx += x * x;
    sxy += x * yv;
  }
  const double dn = static_cast<double>(n);
  return (dn * sxy - sx * sy) / (dn * sxx - sx * sx);
}

/// KL cache: header "n_modes n_nodes gamma delta seed", one eigenvalue line,
/// then one row of nodal values per mode. 17 significant digits.
inline void write_kl_cache(std::ostream& out, const KLModes& modes) {
  out << modes.num_modes() << ' ' << modes.num_nodes() << ' '
      << detail::format_double(modes.gamma) << ' ' << detail::format_double(modes.delta) << ' '
      << modes.seed << '\n';
  for (Eigen::Index k = 0; k < modes.eigenvalues.size(); ++k) {
    if (k) out << ' ';
    out << detail::format_double(modes.eigenvalues[k]);
  }
  out << '\n';
  for (Eigen::Index k = 0; k < modes.eigenvectors.cols(); ++k) {
    for (Eigen::Index i = 0; i < modes.eigenvectors.rows(); ++i) {
      if (i) out << ' ';
      out << detail::format_double(modes.eigenvectors(i, k));
    }
    out << '\n';
  }
}

inline KLModes read_kl_cache(std::istream& in) {
  KLModes m;
  std::size_t n_modes = 0, n_nodes = 0;
  if (!(in >> n_modes >> n_nodes)) throw FormatError("KL cache header", 1);
  std::string g, d;
  if (!(in >> g >> d >> m.seed)) throw FormatError("KL cache header", 1);
  try {
    m.gamma = std::stod(g);
    m.delta = std::stod(d);
  } catch (const std::exception&) {
    throw FormatError("KL cache header", 1);
  }
  auto read_value = [&](std::size_t line) {
    std::string tok;
    if (!(in >> tok)) throw FormatError("KL cache truncated", line);
    try {
      return std::stod(tok);
    } catch (const std::exception&) {
      throw FormatError("bad KL cache value '" + tok + "'", line);
    }
  };
  m.eigenvalues.resize(static_cast<Eigen::Index>(n_modes));
  for (std::size_t k = 0; k < n_modes; ++k) m.eigenvalues[static_cast<Eigen::Index>(k)] = read_value(2);
  m.eigenvectors.resize(static_cast<Eigen::Index>(n_nodes), static_cast<Eigen::Index>(n_modes));
  for (std::size_t k = 0; k < n_modes; ++k) {
    for (std::size_t i = 0; i < n_nodes; ++i) {
      m.eigenvectors(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = read_value(3 + k);
    }
  }
  return m;
}

inline void save_kl_cache(const std::string& path, const KLModes& modes) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write KL cache '" + path + "'");
  write_kl_cache(out, modes);
}

inline KLModes load_kl_cache(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open KL cache '" + path + "'");
  return read_kl_cache(in);
}

// ---------------------------------------------------------------------------
// Lognormal KL model

class LognormalKLModel {
public:
  LognormalKLModel(double a0, double kappa0, KLModes modes_a, KLModes modes_kappa, std::size_t s)
      : a0_(a0), kappa0_(kappa0), modes_a_(std::move(modes_a)),
        modes_kappa_(std::move(modes_kappa)), s_(s) {
    if (s_ % 2 != 0) throw InvalidArgument("lognormal model: s must be even");
    if (modes_a_.num_modes() < s_ / 2 || modes_kappa_.num_modes() < s_ / 2) {
      throw InvalidArgument("lognormal model: need s/2 modes per field");
    }
    if (modes_a_.num_nodes() != modes_kappa_.num_nodes()) {
      throw InvalidArgument("lognormal model: mode node counts differ");
    }
    for (const auto* m : {&modes_a_, &modes_kappa_}) {
      for (Eigen::Index k = 0; k < m->eigenvalues.size(); ++k) {
        if (!(m->eigenvalues[k] > 0.0)) throw InvalidArgument("eigenvalues must be positive");
        if (k > 0 && m->eigenvalues[k] > m->eigenvalues[k - 1]) {
          throw InvalidArgument("eigenvalues must be sorted descending");
        }
      }
    }
    scaled_a_ = scaled(modes_a_);
    scaled_kappa_ = scaled(modes_kappa_);
  }

  double a0() const noexcept { return a0_; }
  double kappa0() const noexcept { return kappa0_; }
  std::size_t dimension() const noexcept { return s_; }
  std::size_t num_nodes() const noexcept { return modes_a_.num_nodes(); }
  const KLModes& modes_a() const noexcept { return modes_a_; }
  const KLModes& modes_kappa() const noexcept { return modes_kappa_; }

  /// Nodal values of the Gaussian fields (Z_a, Z_kappa).
  std::pair<Eigen::VectorXd, Eigen::VectorXd> gaussian_fields(std::span<const double> y) const {
    check_parameters(y);
    const auto half = static_cast<Eigen::Index>(s_ / 2);
    Eigen::VectorXd ya(half), yk(half);
    for (Eigen::Index k = 0; k < half; ++k) {
      ya[k] = y[2 * k];
      yk[k] = y[2 * k + 1];
    }
    return {scaled_a_ * ya, scaled_kappa_ * yk};
  }

  /// (a, kappa) at mesh node i.
  std::pair<double, double> eval_node(std::span<const double> y, std::size_t node) const {
    check_parameters(y);
    double za = 0.0, zk = 0.0;
    for (std::size_t k = 0; k < s_ / 2; ++k) {
      za += y[2 * k] * scaled_a_(static_cast<Eigen::Index>(node), static_cast<Eigen::Index>(k));
      zk += y[2 * k + 1] *
            scaled_kappa_(static_cast<Eigen::Index>(node), static_cast<Eigen::Index>(k));
    }
    return {a0_ + std::exp(za), kappa0_ + std::exp(zk)};
  }

  void check_parameters(std::span<const double> y) const {
    if (y.size() != s_) {
      throw InvalidArgument("lognormal model expects " + std::to_string(s_) +
                            " parameters, got " + std::to_string(y.size()));
    }
    for (double v : y) {
      if (!std::isfinite(v)) throw InvalidArgument("lognormal parameters must be finite");
    }
  }

  /// Coefficients at the quadrature points: exp of the interpolated field.
  CoefficientSample sample(const Mesh& mesh, std::span<const double> y) const {
    if (mesh.num_nodes() != num_nodes()) throw InvalidArgument("mesh does not match KL modes");
    const auto [za, zk] = gaussian_fields(y);
    CoefficientSample out{interpolate_at_quadrature(mesh, std::span(za.data(), za.size())),
                          interpolate_at_quadrature(mesh, std::span(zk.data(), zk.size()))};
    for (auto& v : out.diffusion) v = a0_ + std::exp(v);
    for (auto& v : out.proliferation) v = kappa0_ + std::exp(v);
    return out;
  }

private:
  Eigen::MatrixXd scaled(const KLModes& m) const {
    const auto half = static_cast<Eigen::Index>(s_ / 2);
    Eigen::MatrixXd out = m.eigenvectors.leftCols(half);
    for (Eigen::Index k = 0; k < half; ++k) out.col(k) *= std::sqrt(m.eigenvalues[k]);
    return out;
  }

  double a0_, kappa0_;
  KLModes modes_a_, modes_kappa_;
  std::size_t s_;
  Eigen::MatrixXd scaled_a_, scaled_kappa_;
};

/// (a, kappa) at an arbitrary point, by P1 interpolation of the Gaussian
/// fields on the containing triangle.
inline std::pair<double, double> eval_lognormal(const LognormalKLModel& model, const Mesh& mesh,
                                                std::span<const double> y, Point x) {
  const auto [za, zk] = model.gaussian_fields(y);
  constexpr double tol = 1e-12;
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    const auto& tri = mesh.triangles()[t];
    const Point& p0 = mesh.nodes()[tri[0]];
    const Point& p1 = mesh.nodes()[tri[1]];
    const Point& p2 = mesh.nodes()[tri[2]];
    const double det = (p1.x - p0.x) * (p2.y - p0.y) - (p2.x - p0.x) * (p1.y - p0.y);
    const double l1 = ((x.x - p0.x) * (p2.y - p0.y) - (p2.x - p0.x) * (x.y - p0.y)) / det;
    const double l2 = ((p1.x - p0.x) * (x.y - p0.y) - (x.x - p0.x) * (p1.y - p0.y)) / det;
    const double l0 = 1.0 - l1 - l2;
    if (l0 >= -tol && l1 >= -tol && l2 >= -tol) {
      const double a = l0 * za[tri[0]] + l1 * za[tri[1]] + l2 * za[tri[2]];
      const double k = l0 * zk[tri[0]] + l1 * zk[tri[1]] + l2 * zk[tri[2]];
      return {model.a0() + std::exp(a), model.kappa0() + std::exp(k)};
    }
  }
  throw InvalidArgument("point lies outside the mesh");
}

} // namespace qmctumor

#endif
