#ifndef QMCTUMOR_MESH_HPP
#define QMCTUMOR_MESH_HPP

// Planar P1 triangulations: structured rectangles and a small text format.

#include <qmctumor/errors.hpp>

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace qmctumor {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

using Triangle = std::array<int, 3>;

/// Immutable triangulation. Triangles are counter-clockwise; lengths in mm.
class Mesh {
public:
  Mesh() = default;

  /// Validates indices and orientation; flips clockwise triangles.
  Mesh(std::vector<Point> nodes, std::vector<Triangle> triangles)
      : nodes_(std::move(nodes)), triangles_(std::move(triangles)) {
    const auto n = static_cast<long>(nodes_.size());
    domain_area_ = 0.0;
    for (std::size_t t = 0; t < triangles_.size(); ++t) {
      auto& tri = triangles_[t];
      for (int v : tri) {
        if (v < 0 || v >= n) {
          throw ValidationError("triangle " + std::to_string(t) + " references node " +
                                std::to_string(v) + " but mesh has " + std::to_string(n) +
                                " nodes");
        }
      }
      double a = signed_area(tri);
      if (a < 0.0) {
        std::swap(tri[1], tri[2]);
        a = -a;
      }
      if (!(a > 0.0)) {
        throw ValidationError("triangle " + std::to_string(t) + " is degenerate");
      }
      domain_area_ += a;
    }
  }

  const std::vector<Point>& nodes() const noexcept { return nodes_; }
  const std::vector<Triangle>& triangles() const noexcept { return triangles_; }
  std::size_t num_nodes() const noexcept { return nodes_.size(); }
  std::size_t num_triangles() const noexcept { return triangles_.size(); }
  double domain_area() const noexcept { return domain_area_; }

  double signed_area(const Triangle& tri) const {
    const Point& a = nodes_[tri[0]];
    const Point& b = nodes_[tri[1]];
    const Point& c = nodes_[tri[2]];
    return 0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y));
  }

  double area(std::size_t t) const { return signed_area(triangles_[t]); }

  /// Area-weighted centroid of the domain.
  Point centroid() const {
    double cx = 0.0, cy = 0.0;
    for (std::size_t t = 0; t < triangles_.size(); ++t) {
      const auto& tri = triangles_[t];
      const double a = area(t);
      cx += a * (nodes_[tri[0]].x + nodes_[tri[1]].x + nodes_[tri[2]].x) / 3.0;
      cy += a * (nodes_[tri[0]].y + nodes_[tri[1]].y + nodes_[tri[2]].y) / 3.0;
    }
    return {cx / domain_area_, cy / domain_area_};
  }

  /// Constant gradients of the three barycentric basis functions on triangle t.
  std::array<Point, 3> basis_gradients(std::size_t t) const {
    const auto& tri = triangles_[t];
    const Point& p0 = nodes_[tri[0]];
    const Point& p1 = nodes_[tri[1]];
    const Point& p2 = nodes_[tri[2]];
    const double two_area = 2.0 * area(t);
    return {Point{(p1.y - p2.y) / two_area, (p2.x - p1.x) / two_area},
            Point{(p2.y - p0.y) / two_area, (p0.x - p2.x) / two_area},
            Point{(p0.y - p1.y) / two_area, (p1.x - p0.x) / two_area}};
  }

private:
  std::vector<Point> nodes_;
  std::vector<Triangle> triangles_;
  double domain_area_ = 0.0;
};

/// Uniform grid on [0,length]^2, each cell split along its lower-left to
/// upper-right diagonal.
inline Mesh generate_structured(double length, int n_cells_per_side) {
  if (!(length > 0.0) || !std::isfinite(length)) {
    throw InvalidArgument("structured mesh length must be positive");
  }
  if (n_cells_per_side < 1) {
    throw InvalidArgument("structured mesh needs at least one cell per side");
  }
  const int n = n_cells_per_side;
  const double h = length / n;
  std::vector<Point> nodes;
  nodes.reserve(static_cast<std::size_t>(n + 1) * (n + 1));
  for (int j = 0; j <= n; ++j) {
    for (int i = 0; i <= n; ++i) {
      // Pin the far edge to `length` so the area closes exactly.
      const double x = i == n ? length : i * h;
      const double y = j == n ? length : j * h;
      nodes.push_back({x, y});
    }
  }
  std::vector<Triangle> tris;
  tris.reserve(2 * static_cast<std::size_t>(n) * n);
  auto id = [n](int i, int j) { return j * (n + 1) + i; };
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      const int ll = id(i, j), lr = id(i + 1, j), ul = id(i, j + 1), ur = id(i + 1, j + 1);
      tris.push_back({ll, lr, ur});
      tris.push_back({ll, ur, ul});
    }
  }
  return Mesh(std::move(nodes), std::move(tris));
}

namespace detail {

// Next non-empty, non-comment line; returns false at EOF.
inline bool next_data_line(std::istream& in, std::string& line, std::size_t& line_no) {
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    return true;
  }
  return false;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

} // namespace detail

/// Parses the mesh text format from a stream.
inline Mesh read_mesh(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  auto expect_line = [&](const char* what) {
    if (!detail::next_data_line(in, line, line_no)) {
      throw FormatError(std::string("unexpected end of file, expected ") + what, line_no + 1);
    }
    return std::istringstream(line);
  };
  auto check_end = [&](std::istringstream& ss) {
    std::string extra;
    if (ss >> extra) throw FormatError("trailing token '" + extra + "'", line_no);
  };

  long n_nodes = 0, n_tris = 0;
  {
    auto ss = expect_line("header");
    if (!(ss >> n_nodes >> n_tris) || n_nodes < 0 || n_tris < 0) {
      throw FormatError("header must be 'N_nodes N_triangles'", line_no);
    }
    check_end(ss);
  }
  std::vector<Point> nodes(static_cast<std::size_t>(n_nodes));
  for (auto& p : nodes) {
    auto ss = expect_line("node coordinates");
    std::string xs, ys;
    if (!(ss >> xs >> ys)) throw FormatError("node line must be 'x y'", line_no);
    try {
      std::size_t px = 0, py = 0;
      p.x = std::stod(xs, &px);
      p.y = std::stod(ys, &py);
      if (px != xs.size() || py != ys.size()) throw std::invalid_argument("partial");
    } catch (const std::exception&) {
      throw FormatError("bad coordinate '" + line + "'", line_no);
    }
    check_end(ss);
  }
  std::vector<Triangle> tris(static_cast<std::size_t>(n_tris));
  for (auto& t : tris) {
    auto ss = expect_line("triangle indices");
    if (!(ss >> t[0] >> t[1] >> t[2])) {
      throw FormatError("triangle line must be 'i j k'", line_no);
    }
    check_end(ss);
  }
  if (detail::next_data_line(in, line, line_no)) {
    throw FormatError("unexpected content after triangle list", line_no);
  }
  return Mesh(std::move(nodes), std::move(tris));
}

inline Mesh load_mesh(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open mesh file '" + path + "'");
  return read_mesh(in);
}

/// Writes coordinates with 17 significant digits so a reload is bit-exact.
inline void write_mesh(std::ostream& out, const Mesh& mesh) {
  out << mesh.num_nodes() << ' ' << mesh.num_triangles() << '\n';
  for (const auto& p : mesh.nodes()) {
    out << detail::format_double(p.x) << ' ' << detail::format_double(p.y) << '\n';
  }
  for (const auto& t : mesh.triangles()) {
    out << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
  }
}

inline void save_mesh(const std::string& path, const Mesh& mesh) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write mesh file '" + path + "'");
  write_mesh(out, mesh);
}

} // namespace qmctumor

#endif
