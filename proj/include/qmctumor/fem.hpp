#ifndef QMCTUMOR_FEM_HPP
#define QMCTUMOR_FEM_HPP

// P1 finite element assembly on triangulations.
//
// Every operator shares one symmetric sparsity pattern (node adjacency), so the
// solver combines them by adding value arrays. Spatially varying coefficients
// are sampled at the three edge midpoints of each triangle; that rule is exact
// for quadratic integrands.

#include <qmctumor/errors.hpp>
#include <qmctumor/mesh.hpp>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

namespace qmctumor {

/// Compressed-row sparse matrix.
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor, int>;

struct QuadratureRule {
  std::vector<std::array<double, 3>> points; // barycentric
  std::vector<double> weights;               // sum to 1
};

inline const QuadratureRule& mid_edge_rule() {
  static const QuadratureRule rule{
      {{0.5, 0.5, 0.0}, {0.0, 0.5, 0.5}, {0.5, 0.0, 0.5}},
      {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0}};
  return rule;
}

inline constexpr int kQuadPoints = 3;

/// Coefficient samples at quadrature points, stored triangle-major:
/// value of triangle t at point q lives at [kQuadPoints * t + q].
using QuadratureValues = std::vector<double>;

inline Point quadrature_point(const Mesh& mesh, std::size_t t, int q) {
  const auto& tri = mesh.triangles()[t];
  const auto& b = mid_edge_rule().points[q];
  Point p{};
  for (int k = 0; k < 3; ++k) {
    p.x += b[k] * mesh.nodes()[tri[k]].x;
    p.y += b[k] * mesh.nodes()[tri[k]].y;
  }
  return p;
}

template <class F>
QuadratureValues sample_at_quadrature(const Mesh& mesh, F&& f) {
  QuadratureValues out(kQuadPoints * mesh.num_triangles());
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    for (int q = 0; q < kQuadPoints; ++q) {
      out[kQuadPoints * t + q] = f(quadrature_point(mesh, t, q));
    }
  }
  return out;
}

/// P1 interpolation of a nodal field at the quadrature points.
inline QuadratureValues interpolate_at_quadrature(const Mesh& mesh, std::span<const double> nodal) {
  QuadratureValues out(kQuadPoints * mesh.num_triangles());
  const auto& rule = mid_edge_rule();
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    const auto& tri = mesh.triangles()[t];
    for (int q = 0; q < kQuadPoints; ++q) {
      double v = 0.0;
      for (int k = 0; k < 3; ++k) v += rule.points[q][k] * nodal[tri[k]];
      out[kQuadPoints * t + q] = v;
    }
  }
  return out;
}

/// Node-adjacency CSR pattern of a mesh together with the map from element
/// matrix entries to positions in the value array.
class P1Pattern {
public:
  explicit P1Pattern(const Mesh& mesh) : mesh_(&mesh) {
    const std::size_t n = mesh.num_nodes();
    std::vector<std::vector<int>> adj(n);
    for (const auto& tri : mesh.triangles()) {
      for (int a : tri) {
        for (int b : tri) adj[a].push_back(b);
      }
    }
    row_offsets_.assign(n + 1, 0);
    for (std::size_t i = 0; i < n; ++i) {
      adj[i].push_back(static_cast<int>(i));
      std::sort(adj[i].begin(), adj[i].end());
      adj[i].erase(std::unique(adj[i].begin(), adj[i].end()), adj[i].end());
      row_offsets_[i + 1] = row_offsets_[i] + static_cast<int>(adj[i].size());
    }
    col_indices_.reserve(row_offsets_[n]);
    for (auto& row : adj) col_indices_.insert(col_indices_.end(), row.begin(), row.end());

    auto position = [&](int r, int c) {
      const auto begin = col_indices_.begin() + row_offsets_[r];
      const auto end = col_indices_.begin() + row_offsets_[r + 1];
      return static_cast<int>(std::lower_bound(begin, end, c) - col_indices_.begin());
    };
    scatter_.resize(9 * mesh.num_triangles());
    for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
      const auto& tri = mesh.triangles()[t];
      for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) scatter_[9 * t + 3 * a + b] = position(tri[a], tri[b]);
      }
    }
    diagonal_.resize(n);
    row_of_.resize(col_indices_.size());
    for (std::size_t i = 0; i < n; ++i) {
      diagonal_[i] = position(static_cast<int>(i), static_cast<int>(i));
      for (int p = row_offsets_[i]; p < row_offsets_[i + 1]; ++p) row_of_[p] = static_cast<int>(i);
    }
  }

  const Mesh& mesh() const noexcept { return *mesh_; }
  std::size_t size() const noexcept { return mesh_->num_nodes(); }
  std::size_t nnz() const noexcept { return col_indices_.size(); }
  const std::vector<int>& row_offsets() const noexcept { return row_offsets_; }
  const std::vector<int>& col_indices() const noexcept { return col_indices_; }
  const std::vector<int>& diagonal_positions() const noexcept { return diagonal_; }
  /// Row index of every stored entry.
  const std::vector<int>& row_of_entry() const noexcept { return row_of_; }
  int scatter(std::size_t t, int a, int b) const { return scatter_[9 * t + 3 * a + b]; }

  /// Wraps a value array (length nnz) as a CSR matrix.
  SparseMatrix to_matrix(std::span<const double> values) const {
    const auto n = static_cast<Eigen::Index>(size());
    Eigen::Map<const SparseMatrix> view(n, n, static_cast<Eigen::Index>(nnz()),
                                        row_offsets_.data(), col_indices_.data(), values.data());
    return SparseMatrix(view);
  }

private:
  const Mesh* mesh_;
  std::vector<int> row_offsets_;
  std::vector<int> col_indices_;
  std::vector<int> scatter_;
  std::vector<int> diagonal_;
  std::vector<int> row_of_;
};

/// Adds the weighted mass matrix into `values` (length nnz of the pattern).
inline void add_weighted_mass(const P1Pattern& pattern, const QuadratureValues& weight,
                              std::span<double> values, double scale = 1.0) {
  const Mesh& mesh = pattern.mesh();
  const auto& rule = mid_edge_rule();
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    const double area = mesh.area(t);
    double local[3][3] = {};
    for (int q = 0; q < kQuadPoints; ++q) {
      const double wq = scale * rule.weights[q] * area * weight[kQuadPoints * t + q];
      const auto& b = rule.points[q];
      for (int a = 0; a < 3; ++a) {
        for (int c = 0; c < 3; ++c) local[a][c] += wq * b[a] * b[c];
      }
    }
    for (int a = 0; a < 3; ++a) {
      for (int c = 0; c < 3; ++c) values[pattern.scatter(t, a, c)] += local[a][c];
    }
  }
}

/// Adds the coefficient-weighted stiffness matrix into `values`. Throws
/// CoefficientBoundError if any coefficient sample is not strictly positive.
inline void add_stiffness(const P1Pattern& pattern, const QuadratureValues& coeff,
                          std::span<double> values) {
  const Mesh& mesh = pattern.mesh();
  const auto& rule = mid_edge_rule();
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    double integral = 0.0;
    for (int q = 0; q < kQuadPoints; ++q) {
      const double c = coeff[kQuadPoints * t + q];
      if (!(c > 0.0) || !std::isfinite(c)) {
        throw CoefficientBoundError("diffusion coefficient " + std::to_string(c) +
                                    " at triangle " + std::to_string(t) + " is not positive");
      }
      integral += rule.weights[q] * c;
    }
    integral *= mesh.area(t);
    const auto g = mesh.basis_gradients(t);
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) {
        values[pattern.scatter(t, a, b)] += integral * (g[a].x * g[b].x + g[a].y * g[b].y);
      }
    }
  }
}

namespace detail {

template <class F>
QuadratureValues as_quadrature_values(const Mesh& mesh, F&& f) {
  if constexpr (std::is_convertible_v<F, const QuadratureValues&>) {
    return f;
  } else if constexpr (std::is_arithmetic_v<std::decay_t<F>>) {
    return QuadratureValues(kQuadPoints * mesh.num_triangles(), static_cast<double>(f));
  } else {
    return sample_at_quadrature(mesh, std::forward<F>(f));
  }
}

} // namespace detail

inline SparseMatrix assemble_weighted_mass(const Mesh& mesh, const QuadratureValues& weight) {
  const P1Pattern pattern(mesh);
  std::vector<double> values(pattern.nnz(), 0.0);
  add_weighted_mass(pattern, weight, values);
  return pattern.to_matrix(values);
}

/// `weight` may be a callable Point -> double or a constant.
template <class F>
  requires(!std::is_same_v<std::remove_cvref_t<F>, QuadratureValues>)
SparseMatrix assemble_weighted_mass(const Mesh& mesh, F&& weight) {
  return assemble_weighted_mass(mesh,
                                detail::as_quadrature_values(mesh, std::forward<F>(weight)));
}

inline SparseMatrix assemble_mass(const Mesh& mesh) { return assemble_weighted_mass(mesh, 1.0); }

inline SparseMatrix assemble_stiffness(const Mesh& mesh, const QuadratureValues& coeff) {
  const P1Pattern pattern(mesh);
  std::vector<double> values(pattern.nnz(), 0.0);
  add_stiffness(pattern, coeff, values);
  return pattern.to_matrix(values);
}

template <class F>
  requires(!std::is_same_v<std::remove_cvref_t<F>, QuadratureValues>)
SparseMatrix assemble_stiffness(const Mesh& mesh, F&& coeff) {
  return assemble_stiffness(mesh, detail::as_quadrature_values(mesh, std::forward<F>(coeff)));
}

/// Row sums: the diagonal of the lumped matrix.
inline Eigen::VectorXd lump(const SparseMatrix& m) {
  Eigen::VectorXd d = Eigen::VectorXd::Zero(m.rows());
  for (Eigen::Index r = 0; r < m.outerSize(); ++r) {
    for (SparseMatrix::InnerIterator it(m, r); it; ++it) d[r] += it.value();
  }
  return d;
}

/// Row sums of a value array laid out on `pattern`.
inline void lump_values(const P1Pattern& pattern, std::span<const double> values,
                        std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  const auto& rows = pattern.row_of_entry();
  for (std::size_t p = 0; p < values.size(); ++p) out[rows[p]] += values[p];
}

} // namespace qmctumor

#endif
