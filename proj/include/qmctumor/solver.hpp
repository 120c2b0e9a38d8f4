#ifndef QMCTUMOR_SOLVER_HPP
#define QMCTUMOR_SOLVER_HPP

// Implicit Euler / Newton time stepping for the tumor growth equation
//
//   u_t - div(a grad u) - kappa u (1 - u) + f u = s,   homogeneous Neumann,
//
// and for its exponentially shifted form (u = e^{lambda t} w)
//
//   w_t - div(a grad w) + kappa e^{lambda t} w^2 + (lambda + f - kappa) w = 0.
//
// Both share the discrete residual
//
//   M (v - v_n)/dt + K v + q Mk (v.^2) - Mk v + (Mf + l M) v - M s
//
// with (q, l) = (1, 0) for the original form and (e^{lambda t}, lambda) for the
// shifted one. The quadratic term is the group finite element approximation:
// the kappa-weighted mass matrix applied to nodal squares.

#include <qmctumor/errors.hpp>
#include <qmctumor/fem.hpp>
#include <qmctumor/mesh.hpp>
#include <qmctumor/treatment.hpp>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace qmctumor {

using StateVector = Eigen::VectorXd;

/// Optional manufactured source s(x, t).
using SourceTerm = std::function<double(Point, double)>;

/// Exponential shift for the reparameterized solve: disabled, a fixed value,
/// or kappa_max + 1 of the sample.
struct LambdaShift {
  enum class Mode { off, fixed, automatic };
  Mode mode = Mode::off;
  double value = 0.0;

  static LambdaShift off() { return {}; }
  static LambdaShift fixed(double v) { return {Mode::fixed, v}; }
  static LambdaShift automatic() { return {Mode::automatic, 0.0}; }
  bool enabled() const noexcept { return mode != Mode::off; }
};

struct SolverConfig {
  double dt = 0.125;         // days
  double final_time = 7.0;   // days
  double newton_tol = 1e-10; // Euclidean norm of the residual vector
  int newton_max_iter = 25;
  bool mass_lumping = true;
  LambdaShift lambda_shift;
  bool keep_trajectory = false;

  void validate() const {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw InvalidArgument("dt must be positive");
    if (!(final_time >= dt)) throw InvalidArgument("final time must be at least dt");
    if (!(newton_tol > 0.0)) throw InvalidArgument("newton_tol must be positive");
    if (newton_max_iter < 1) throw InvalidArgument("newton_max_iter must be >= 1");
    if (lambda_shift.mode == LambdaShift::Mode::fixed && !std::isfinite(lambda_shift.value)) {
      throw InvalidArgument("lambda_shift must be finite");
    }
  }

  /// T/dt rounded to the nearest integer.
  int num_steps() const { return static_cast<int>(std::llround(final_time / dt)); }
};

/// Mesh-level data shared read-only by every sample solve.
class Discretization {
public:
  explicit Discretization(const Mesh& mesh)
      : mesh_(&mesh), pattern_(mesh), mass_(pattern_.nnz(), 0.0),
        lumped_mass_(mesh.num_nodes()) {
    add_weighted_mass(pattern_, QuadratureValues(kQuadPoints * mesh.num_triangles(), 1.0),
                      mass_);
    lump_values(pattern_, mass_, std::span<double>(lumped_mass_.data(), lumped_mass_.size()));
  }
  Discretization(const Discretization&) = delete;
  Discretization& operator=(const Discretization&) = delete;

  const Mesh& mesh() const noexcept { return *mesh_; }
  const P1Pattern& pattern() const noexcept { return pattern_; }
  std::span<const double> mass_values() const noexcept { return mass_; }
  const Eigen::VectorXd& lumped_mass() const noexcept { return lumped_mass_; }
  std::size_t size() const noexcept { return mesh_->num_nodes(); }

private:
  const Mesh* mesh_;
  P1Pattern pattern_;
  std::vector<double> mass_;
  Eigen::VectorXd lumped_mass_;
};

namespace detail {

// y = A x for a value array on the shared pattern.
inline void csr_apply(const P1Pattern& p, std::span<const double> values, const double* x,
                      double* y, double scale = 1.0, bool accumulate = false) {
  const auto& off = p.row_offsets();
  const auto& col = p.col_indices();
  const std::size_t n = p.size();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (int k = off[i]; k < off[i + 1]; ++k) s += values[k] * x[col[k]];
    y[i] = accumulate ? y[i] + scale * s : scale * s;
  }
}

} // namespace detail

inline StateVector initial_condition_gaussian(const Mesh& mesh, Point center, double amplitude,
                                              double width) {
  if (!(amplitude >= 0.0 && amplitude <= 1.0)) {
    throw InvalidArgument("initial amplitude must lie in [0, 1]");
  }
  if (!(width > 0.0)) throw InvalidArgument("initial width must be positive");
  StateVector u(static_cast<Eigen::Index>(mesh.num_nodes()));
  for (std::size_t i = 0; i < mesh.num_nodes(); ++i) {
    const double dx = mesh.nodes()[i].x - center.x;
    const double dy = mesh.nodes()[i].y - center.y;
    u[static_cast<Eigen::Index>(i)] =
        amplitude * std::exp(-(dx * dx + dy * dy) / (2.0 * width * width));
  }
  return u;
}

/// Which form of the equation a stepper advances.
struct Formulation {
  bool shifted = false;
  double lambda = 0.0;

  static Formulation original() { return {}; }
  static Formulation reparameterized(double lambda) { return {true, lambda}; }
};

/// Implicit Euler stepper for one coefficient sample. Owns the factorization
/// workspace; not shareable across threads.
class TimeStepper {
public:
  TimeStepper(const Discretization& disc, const QuadratureValues& diffusion,
              const QuadratureValues& proliferation, const Treatment& treatment,
              const SolverConfig& config, Formulation form = Formulation::original(),
              SourceTerm source = {})
      : disc_(&disc), treatment_(&treatment), config_(config), form_(form),
        source_(std::move(source)) {
    config_.validate();
    const std::size_t n = disc.size();
    const std::size_t nnz = disc.pattern().nnz();
    const std::size_t nq = kQuadPoints * disc.mesh().num_triangles();
    if (diffusion.size() != nq || proliferation.size() != nq) {
      throw InvalidArgument("coefficient arrays do not match the mesh quadrature");
    }
    if (form_.shifted && source_) {
      throw InvalidArgument("manufactured sources are only supported for the original form");
    }
    stiffness_.assign(nnz, 0.0);
    add_stiffness(disc.pattern(), diffusion, stiffness_);
    kappa_mass_.assign(nnz, 0.0);
    add_weighted_mass(disc.pattern(), proliferation, kappa_mass_);
    kappa_max_ = *std::max_element(proliferation.begin(), proliferation.end());

    mass_lumped_ = disc.lumped_mass();
    kappa_lumped_.resize(static_cast<Eigen::Index>(n));
    lump_values(disc.pattern(), kappa_mass_,
                std::span<double>(kappa_lumped_.data(), kappa_lumped_.size()));

    if (!treatment.is_spatially_uniform()) {
      f_values_.assign(nnz, 0.0);
      f_lumped_.resize(static_cast<Eigen::Index>(n));
    }

    // Symmetric pattern: the CSR arrays double as CSC arrays, so the Jacobian
    // values can be written position by position.
    jacobian_ = Eigen::SparseMatrix<double>(disc.pattern().to_matrix(stiffness_));
    jacobian_.makeCompressed();
    if (config_.mass_lumping) {
      ldlt_.analyzePattern(jacobian_);
    } else {
      lu_.analyzePattern(jacobian_);
    }
    residual_.resize(static_cast<Eigen::Index>(n));
    work_.resize(static_cast<Eigen::Index>(n));
    load_.resize(static_cast<Eigen::Index>(n));
  }

  double kappa_max() const noexcept { return kappa_max_; }
  const std::vector<double>& residual_trace() const noexcept { return trace_; }
  int last_iterations() const noexcept { return static_cast<int>(trace_.size()) - 1; }

  /// Advances v_n to t_next. Forcing is evaluated at t_next.
  StateVector step(const StateVector& v_n, double t_next) {
    const double dt = config_.dt;
    const double q = form_.shifted ? std::exp(form_.lambda * t_next) : 1.0;
    const double ell = form_.shifted ? form_.lambda : 0.0;
    // The shifted residual is scaled by e^{lambda t} so the absolute
    // tolerance is measured in units of u rather than w.
    const double scale = q;
    update_forcing(t_next);
    // Newton from v_n is not globally convergent once kappa dt > 1: it may
    // stall or land on a root with negative entries. From the upper state
    // max(v_n, 1) (u <= 1) the iterates decrease monotonically to the
    // nonnegative solution.
    const bool indefinite = !form_.shifted && kappa_max_ * dt >= 1.0;
    try {
      StateVector v = newton(v_n, v_n, t_next, dt, q, ell, scale);
      if (!indefinite || v.minCoeff() >= -1e-6) return v;
    } catch (const NonconvergenceError&) {
    }
    const StateVector upper = v_n.cwiseMax(1.0 / q);
    return newton(upper, v_n, t_next, dt, q, ell, scale);
  }

private:
  StateVector newton(StateVector v, const StateVector& v_n, double t_next, double dt, double q,
                     double ell, double scale) {
    trace_.clear();
    for (int iter = 0;; ++iter) {
      compute_residual(v, v_n, dt, q, ell);
      residual_ *= scale;
      const double norm = residual_.norm();
      trace_.push_back(norm);
      if (!std::isfinite(norm)) {
        throw NonconvergenceError("Newton residual is not finite at t=" + std::to_string(t_next),
                                  trace_);
      }
      if (norm <= config_.newton_tol) break;
      if (iter >= config_.newton_max_iter) {
        std::ostringstream msg;
        msg << "Newton did not converge at t=" << t_next << " after " << iter
            << " iterations (residual " << norm << ")";
        throw NonconvergenceError(msg.str(), trace_);
      }
      assemble_jacobian(v, dt, q, ell, scale);
      solve_in_place(residual_);
      v -= residual_;
    }
    return v;
  }

  void update_forcing(double t) {
    if (treatment_->is_spatially_uniform()) {
      f_scalar_ = treatment_->eval(Point{}, t, config_.dt);
    } else {
      const Mesh& mesh = disc_->mesh();
      const auto f_qp = sample_at_quadrature(
          mesh, [&](Point x) { return treatment_->eval(x, t, config_.dt); });
      std::fill(f_values_.begin(), f_values_.end(), 0.0);
      add_weighted_mass(disc_->pattern(), f_qp, f_values_);
      lump_values(disc_->pattern(), f_values_,
                  std::span<double>(f_lumped_.data(), f_lumped_.size()));
    }
    if (source_) {
      const Mesh& mesh = disc_->mesh();
      for (std::size_t i = 0; i < mesh.num_nodes(); ++i) {
        work_[static_cast<Eigen::Index>(i)] = source_(mesh.nodes()[i], t);
      }
      if (config_.mass_lumping) {
        load_ = mass_lumped_.cwiseProduct(work_);
      } else {
        detail::csr_apply(disc_->pattern(), disc_->mass_values(), work_.data(), load_.data());
      }
    } else {
      load_.setZero();
    }
  }

  void compute_residual(const StateVector& v, const StateVector& v_n, double dt, double q,
                        double ell) {
    const auto& pat = disc_->pattern();
    const Eigen::Index n = v.size();
    double* r = residual_.data();
    detail::csr_apply(pat, stiffness_, v.data(), r);
    if (config_.mass_lumping) {
      const double* m = mass_lumped_.data();
      const double* mk = kappa_lumped_.data();
      for (Eigen::Index i = 0; i < n; ++i) {
        const double mf = treatment_->is_spatially_uniform() ? f_scalar_ * m[i] : f_lumped_[i];
        r[i] += m[i] * (v[i] - v_n[i]) / dt + q * mk[i] * v[i] * v[i] - mk[i] * v[i] +
                (mf + ell * m[i]) * v[i];
      }
    } else {
      const auto mass = disc_->mass_values();
      for (Eigen::Index i = 0; i < n; ++i) work_[i] = (v[i] - v_n[i]) / dt;
      detail::csr_apply(pat, mass, work_.data(), r, 1.0, true);
      for (Eigen::Index i = 0; i < n; ++i) work_[i] = q * v[i] * v[i] - v[i];
      detail::csr_apply(pat, kappa_mass_, work_.data(), r, 1.0, true);
      if (treatment_->is_spatially_uniform()) {
        detail::csr_apply(pat, mass, v.data(), r, f_scalar_ + ell, true);
      } else {
        detail::csr_apply(pat, f_values_, v.data(), r, 1.0, true);
        if (ell != 0.0) detail::csr_apply(pat, mass, v.data(), r, ell, true);
      }
    }
    residual_ -= load_;
  }

  void assemble_jacobian(const StateVector& v, double dt, double q, double ell, double scale) {
    const auto& pat = disc_->pattern();
    double* jv = jacobian_.valuePtr();
    const std::size_t nnz = pat.nnz();
    if (config_.mass_lumping) {
      for (std::size_t p = 0; p < nnz; ++p) jv[p] = scale * stiffness_[p];
      const auto& diag = pat.diagonal_positions();
      for (Eigen::Index i = 0; i < v.size(); ++i) {
        const double m = mass_lumped_[i];
        const double mf = treatment_->is_spatially_uniform() ? f_scalar_ * m : f_lumped_[i];
        jv[diag[i]] += scale * (m / dt + kappa_lumped_[i] * (2.0 * q * v[i] - 1.0) + mf + ell * m);
      }
      ldlt_.factorize(jacobian_);
      if (ldlt_.info() != Eigen::Success) {
        throw NonconvergenceError("Newton Jacobian factorization failed", trace_);
      }
    } else {
      // Column j of d/dv [Mk (q v^2 - v)] is Mk(:, j) (2 q v_j - 1); reading
      // the symmetric CSR arrays as CSC, entry p sits in column row_of_entry[p].
      const auto mass = disc_->mass_values();
      const auto& col_of = pat.row_of_entry();
      const bool uniform = treatment_->is_spatially_uniform();
      for (std::size_t p = 0; p < nnz; ++p) {
        const int j = col_of[p];
        const double mf = uniform ? f_scalar_ * mass[p] : f_values_[p];
        jv[p] = scale * (mass[p] / dt + stiffness_[p] + kappa_mass_[p] * (2.0 * q * v[j] - 1.0) +
                         mf + ell * mass[p]);
      }
      lu_.factorize(jacobian_);
      if (lu_.info() != Eigen::Success) {
        throw NonconvergenceError("Newton Jacobian factorization failed", trace_);
      }
    }
  }

  void solve_in_place(StateVector& rhs) {
    if (config_.mass_lumping) {
      rhs = ldlt_.solve(rhs);
    } else {
      rhs = lu_.solve(rhs);
    }
  }

  const Discretization* disc_;
  const Treatment* treatment_;
  SolverConfig config_;
  Formulation form_;
  SourceTerm source_;

  std::vector<double> stiffness_;
  std::vector<double> kappa_mass_;
  std::vector<double> f_values_;
  Eigen::VectorXd mass_lumped_, kappa_lumped_, f_lumped_;
  double f_scalar_ = 0.0;
  double kappa_max_ = 0.0;

  Eigen::SparseMatrix<double> jacobian_;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt_;
  Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu_;
  StateVector residual_, work_, load_;
  std::vector<double> trace_;
};

struct SolveResult {
  StateVector terminal;           // u(T), mapped back for the shifted form
  double min_value = 0.0;         // over all time levels of the solved variable
  double max_value = 0.0;
  int newton_iterations = 0;      // summed over steps
  double lambda = 0.0;            // shift used, 0 for the original form
  std::vector<StateVector> trajectory; // solved variable per level, if kept
};

namespace detail {

inline SolveResult run_time_loop(TimeStepper& stepper, const StateVector& v0,
                                 const SolverConfig& config, double lambda) {
  SolveResult out;
  out.lambda = lambda;
  StateVector v = v0;
  out.min_value = v.minCoeff();
  out.max_value = v.maxCoeff();
  if (config.keep_trajectory) out.trajectory.push_back(v);
  const int steps = config.num_steps();
  for (int n = 0; n < steps; ++n) {
    const double t_next = (n + 1) * config.dt;
    v = stepper.step(v, t_next);
    out.newton_iterations += stepper.last_iterations();
    out.min_value = std::min(out.min_value, v.minCoeff());
    out.max_value = std::max(out.max_value, v.maxCoeff());
    if (config.keep_trajectory) out.trajectory.push_back(v);
  }
  if (lambda != 0.0) v *= std::exp(lambda * steps * config.dt);
  out.terminal = std::move(v);
  return out;
}

inline void check_state(const Discretization& disc, const StateVector& u0) {
  if (static_cast<std::size_t>(u0.size()) != disc.size()) {
    throw InvalidArgument("initial state length does not match the mesh");
  }
  if (!u0.allFinite()) throw InvalidArgument("initial state has non-finite entries");
}

} // namespace detail

/// Advances one step of the original form; see TimeStepper for repeated use.
inline StateVector implicit_euler_step(const Discretization& disc, const StateVector& u_n,
                                       double t_next, const QuadratureValues& diffusion,
                                       const QuadratureValues& proliferation,
                                       const Treatment& treatment, const SolverConfig& config) {
  detail::check_state(disc, u_n);
  TimeStepper stepper(disc, diffusion, proliferation, treatment, config);
  return stepper.step(u_n, t_next);
}

/// Terminal state of the original equation.
inline SolveResult solve(const Discretization& disc, const QuadratureValues& diffusion,
                         const QuadratureValues& proliferation, const Treatment& treatment,
                         const StateVector& u0, const SolverConfig& config,
                         SourceTerm source = {}) {
  detail::check_state(disc, u0);
  TimeStepper stepper(disc, diffusion, proliferation, treatment, config, Formulation::original(),
                      std::move(source));
  return detail::run_time_loop(stepper, u0, config, 0.0);
}

/// Solves the shifted equation for w and returns e^{lambda T} w(T). The
/// trajectory, if kept, holds w. Requires lambda > max kappa.
inline SolveResult solve_pde2_and_map(const Discretization& disc,
                                      const QuadratureValues& diffusion,
                                      const QuadratureValues& proliferation,
                                      const Treatment& treatment, const StateVector& u0,
                                      const SolverConfig& config, LambdaShift shift) {
  detail::check_state(disc, u0);
  if (!shift.enabled()) throw InvalidArgument("shifted solve requires a lambda shift");
  const double kappa_max = *std::max_element(proliferation.begin(), proliferation.end());
  const double lambda =
      shift.mode == LambdaShift::Mode::automatic ? kappa_max + 1.0 : shift.value;
  if (!(lambda > kappa_max)) {
    throw InvalidArgument("lambda_shift " + std::to_string(lambda) +
                          " must exceed the maximum proliferation " + std::to_string(kappa_max));
  }
  TimeStepper stepper(disc, diffusion, proliferation, treatment, config,
                      Formulation::reparameterized(lambda));
  return detail::run_time_loop(stepper, u0, config, lambda);
}

/// Dispatches on config.lambda_shift.
inline SolveResult solve_configured(const Discretization& disc, const QuadratureValues& diffusion,
                                    const QuadratureValues& proliferation,
                                    const Treatment& treatment, const StateVector& u0,
                                    const SolverConfig& config) {
  if (config.lambda_shift.enabled()) {
    return solve_pde2_and_map(disc, diffusion, proliferation, treatment, u0, config,
                              config.lambda_shift);
  }
  return solve(disc, diffusion, proliferation, treatment, u0, config);
}

/// Total cellularity 1^T M u.
inline double qoi_total_cellularity(const StateVector& u, const Discretization& disc) {
  if (static_cast<std::size_t>(u.size()) != disc.size()) {
    throw InvalidArgument("state length does not match the mesh");
  }
  // Row sums of the consistent mass matrix are the lumped masses.
  double total = 0.0;
  for (Eigen::Index i = 0; i < u.size(); ++i) total += disc.lumped_mass()[i] * u[i];
  return total;
}

/// Constant of the a priori bound ||w|| <= C ||w0||:
/// (1 + a_max + lambda + f_max) / sqrt(2 min(a_min, lambda - kappa_max)).
inline double apriori_constant(double a_min, double a_max, double kappa_max, double f_max,
                               double lambda) {
  if (!(a_min > 0.0)) throw InvalidArgument("a_min must be positive");
  if (!(a_max >= a_min)) throw InvalidArgument("a_max must be >= a_min");
  if (!(lambda > kappa_max)) throw InvalidArgument("lambda must exceed kappa_max");
  if (!(f_max >= 0.0)) throw InvalidArgument("f_max must be nonnegative");
  const double denom = std::sqrt(2.0 * std::min(a_min, lambda - kappa_max));
  const double c = (1.0 + a_max + lambda + f_max) / denom;
  if (!std::isfinite(c)) throw InvalidArgument("a priori constant diverges");
  return c;
}

/// Text trajectory: one whitespace-delimited row per time level.
inline void write_trajectory(std::ostream& out, const std::vector<StateVector>& trajectory) {
  out << "# rows=" << trajectory.size()
      << " cols=" << (trajectory.empty() ? 0 : trajectory.front().size()) << '\n';
  for (const auto& row : trajectory) {
    for (Eigen::Index i = 0; i < row.size(); ++i) {
      if (i) out << ' ';
      out << detail::format_double(row[i]);
    }
    out << '\n';
  }
}

} // namespace qmctumor

#endif
