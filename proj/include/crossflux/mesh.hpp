#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "crossflux/errors.hpp"
#include "crossflux/geometry.hpp"

namespace crossflux {

enum class EdgeKind { Interior, Dirichlet, Neumann };

/// Oriented mesh edge. Interior edges are stored once with the K->L
/// orientation fixed by the first cell that discovered them; (a,b) is the
/// vertex order in which cell K traverses the edge, so the interior of K
/// lies to the left of a->b.
struct Edge {
  int a = -1;
  int b = -1;
  EdgeKind kind = EdgeKind::Interior;
  int cell_k = -1;
  int cell_l = -1;          ///< second cell for interior edges, else -1
  double measure = 0.0;     ///< m(sigma)
  double distance = 0.0;    ///< d_sigma: |x_K x_L| interior, d(x_K, sigma) boundary
  double tau = 0.0;         ///< transmissibility m(sigma)/d_sigma
  double diamond = 0.0;     ///< m(T_KL) interior, m(T_Ksigma) boundary
  Vec2 normal;              ///< unit normal, K->L for interior, outward for boundary
  int dirichlet_index = -1; ///< position among Dirichlet edges, -1 otherwise

  bool interior() const { return kind == EdgeKind::Interior; }
};

struct Cell {
  std::vector<int> vertices;  ///< CCW vertex ids
  Vec2 center;                ///< the point x_K the admissibility refers to
  double measure = 0.0;       ///< m(K)
  std::vector<int> edges;     ///< edge ids in traversal order
};

/// Admissible polygonal mesh with precomputed transmissibilities and dual
/// (diamond) cells. Immutable after construction; safe for concurrent reads.
class Mesh {
 public:
  std::vector<Vec2> vertices;
  std::vector<Cell> cells;
  std::vector<Edge> edges;
  std::vector<int> dirichlet_edges;  ///< edge ids carrying Dirichlet marker

  double total_measure = 0.0;  ///< m(Omega)
  double zeta = 0.0;           ///< measured regularity min d(x_K,sigma)/d_sigma
  double mesh_size = 0.0;      ///< h: max cell diameter

  int cell_count() const { return static_cast<int>(cells.size()); }
  int edge_count() const { return static_cast<int>(edges.size()); }
  int dirichlet_count() const { return static_cast<int>(dirichlet_edges.size()); }

  bool pure_neumann() const { return dirichlet_edges.empty(); }

  /// The cell opposite to `cell` across interior edge e.
  int neighbor(const Edge& e, int cell) const {
    return e.cell_k == cell ? e.cell_l : e.cell_k;
  }
};

/// Piecewise constant scalar field with optional Dirichlet traces
/// (one value per Dirichlet edge, in dirichlet_index order).
struct CellField {
  std::vector<double> values;
  std::vector<double> dirichlet;

  CellField() = default;
  explicit CellField(std::vector<double> v) : values(std::move(v)) {}
  CellField(std::vector<double> v, std::vector<double> d)
      : values(std::move(v)), dirichlet(std::move(d)) {}
};

struct AdmissibilityReport {
  bool pass = false;
  double max_orthogonality_defect = 0.0;  ///< worst |cos| between x_Kx_L and sigma
  double zeta = 0.0;                      ///< min d(x_K,sigma)/d_sigma (signed)
  int worst_edge = -1;                    ///< edge attaining the worst defect
  std::string message;
};

namespace detail {

inline double cell_signed_area(const std::vector<Vec2>& verts, const std::vector<int>& ids) {
  std::vector<Vec2> pts;
  pts.reserve(ids.size());
  for (int v : ids) pts.push_back(verts[v]);
  return polygon_signed_area(pts);
}

inline std::pair<int, int> sorted_pair(int a, int b) {
  return a < b ? std::pair{a, b} : std::pair{b, a};
}

}  // namespace detail

/// Assembles a Mesh from raw geometry. Interior edges and all derived
/// quantities (tau, d_sigma, diamond cells, normals) are computed here.
/// `boundary_markers` must list every boundary edge exactly once.
inline Mesh finalize_mesh(std::vector<Vec2> vertices,
                          const std::vector<std::vector<int>>& cell_vertices,
                          const std::vector<Vec2>& centers,
                          const std::vector<std::tuple<int, int, EdgeKind>>& boundary_markers) {
  if (cell_vertices.size() != centers.size())
    throw MeshError("finalize_mesh: center count does not match cell count");

  Mesh m;
  m.vertices = std::move(vertices);
  const int ncells = static_cast<int>(cell_vertices.size());
  m.cells.resize(ncells);

  const int nverts = static_cast<int>(m.vertices.size());
  for (int k = 0; k < ncells; ++k) {
    Cell& c = m.cells[k];
    c.vertices = cell_vertices[k];
    c.center = centers[k];
    if (c.vertices.size() < 3)
      throw MeshError("cell " + std::to_string(k) + " has fewer than 3 vertices");
    for (int v : c.vertices)
      if (v < 0 || v >= nverts)
        throw MeshError("cell " + std::to_string(k) + " references invalid vertex " + std::to_string(v));
    const double area = detail::cell_signed_area(m.vertices, c.vertices);
    if (!(area > 0.0))
      throw MeshError("cell " + std::to_string(k) + " is degenerate or not CCW-oriented");
    c.measure = area;
    m.total_measure += area;
  }

  // Edge discovery: cells in id order, polygon sides in traversal order.
  std::map<std::pair<int, int>, int> edge_of;
  for (int k = 0; k < ncells; ++k) {
    Cell& c = m.cells[k];
    const int nv = static_cast<int>(c.vertices.size());
    for (int s = 0; s < nv; ++s) {
      const int a = c.vertices[s];
      const int b = c.vertices[(s + 1) % nv];
      auto key = detail::sorted_pair(a, b);
      auto it = edge_of.find(key);
      if (it == edge_of.end()) {
        Edge e;
        e.a = a;
        e.b = b;
        e.cell_k = k;
        edge_of.emplace(key, static_cast<int>(m.edges.size()));
        c.edges.push_back(static_cast<int>(m.edges.size()));
        m.edges.push_back(e);
      } else {
        Edge& e = m.edges[it->second];
        if (e.cell_l != -1)
          throw MeshError("edge shared by more than two cells near vertex " + std::to_string(a));
        e.cell_l = k;
        e.kind = EdgeKind::Interior;
        c.edges.push_back(it->second);
      }
    }
  }

  // Boundary markers: every boundary edge exactly one marker.
  std::map<std::pair<int, int>, EdgeKind> marker_of;
  for (const auto& [a, b, kind] : boundary_markers) {
    auto key = detail::sorted_pair(a, b);
    if (marker_of.count(key))
      throw MeshError("duplicate boundary marker for edge (" + std::to_string(a) + "," + std::to_string(b) + ")");
    marker_of.emplace(key, kind);
  }
  for (std::size_t ei = 0; ei < m.edges.size(); ++ei) {
    Edge& e = m.edges[ei];
    auto key = detail::sorted_pair(e.a, e.b);
    auto it = marker_of.find(key);
    if (e.cell_l == -1) {
      if (it == marker_of.end())
        throw MeshError("boundary edge (" + std::to_string(e.a) + "," + std::to_string(e.b) + ") has no marker");
      e.kind = it->second;
      marker_of.erase(it);
      if (e.kind == EdgeKind::Dirichlet) {
        e.dirichlet_index = static_cast<int>(m.dirichlet_edges.size());
        m.dirichlet_edges.push_back(static_cast<int>(ei));
      }
    } else if (it != marker_of.end()) {
      throw MeshError("interior edge (" + std::to_string(e.a) + "," + std::to_string(e.b) + ") listed as boundary");
    }
  }
  if (!marker_of.empty()) {
    auto [a, b] = marker_of.begin()->first;
    throw MeshError("boundary marker (" + std::to_string(a) + "," + std::to_string(b) + ") matches no mesh edge");
  }

  // Derived per-edge quantities.
  double zeta = std::numeric_limits<double>::infinity();
  for (Edge& e : m.edges) {
    const Vec2& va = m.vertices[e.a];
    const Vec2& vb = m.vertices[e.b];
    e.measure = norm(vb - va);
    if (!(e.measure > 0.0))
      throw MeshError("zero-length edge (" + std::to_string(e.a) + "," + std::to_string(e.b) + ")");
    const Vec2 t = (vb - va) / e.measure;
    const Vec2 xk = m.cells[e.cell_k].center;
    if (e.interior()) {
      const Vec2 xl = m.cells[e.cell_l].center;
      e.distance = norm(xl - xk);
      Vec2 n{t.y, -t.x};  // right normal of K's traversal: points away from K
      e.normal = n;
      const Vec2 quad[4] = {xk, va, xl, vb};
      e.diamond = std::abs(polygon_signed_area(quad));
      const double dk = signed_line_distance(xk, va, vb);
      const double dl = -signed_line_distance(xl, va, vb);
      if (e.distance > 0.0) {
        zeta = std::min(zeta, dk / e.distance);
        zeta = std::min(zeta, dl / e.distance);
      } else {
        zeta = std::min(zeta, 0.0);
      }
    } else {
      e.distance = point_segment_distance(xk, va, vb);
      e.normal = Vec2{t.y, -t.x};
      const Vec2 tri[3] = {xk, va, vb};
      e.diamond = std::abs(polygon_signed_area(tri));
      const double dk = signed_line_distance(xk, va, vb);
      zeta = std::min(zeta, e.distance > 0.0 ? dk / e.distance : 0.0);
    }
    if (!(e.distance > 0.0))
      throw MeshError("coincident or misplaced centers at edge (" + std::to_string(e.a) + "," +
                      std::to_string(e.b) + ")");
    e.tau = e.measure / e.distance;
  }
  m.zeta = zeta;

  for (const Cell& c : m.cells) {
    double diam = 0.0;
    for (std::size_t i = 0; i < c.vertices.size(); ++i)
      for (std::size_t j = i + 1; j < c.vertices.size(); ++j)
        diam = std::max(diam, norm(m.vertices[c.vertices[i]] - m.vertices[c.vertices[j]]));
    m.mesh_size = std::max(m.mesh_size, diam);
  }
  return m;
}

/// Measured orthogonality defect and regularity constant. Diagnostic only:
/// always returns a report, never throws.
inline AdmissibilityReport check_admissibility(const Mesh& m, double tol = 1e-10) {
  AdmissibilityReport r;
  r.zeta = m.zeta;
  for (int ei = 0; ei < m.edge_count(); ++ei) {
    const Edge& e = m.edges[ei];
    if (!e.interior()) continue;
    const Vec2 t = (m.vertices[e.b] - m.vertices[e.a]) / e.measure;
    const Vec2 dx = m.cells[e.cell_l].center - m.cells[e.cell_k].center;
    const double defect = std::abs(dot(t, dx)) / norm(dx);
    if (defect > r.max_orthogonality_defect) {
      r.max_orthogonality_defect = defect;
      r.worst_edge = ei;
    }
  }
  r.pass = r.max_orthogonality_defect <= tol && r.zeta > 0.0;
  if (r.pass) {
    r.message = "admissible";
  } else if (r.zeta <= 0.0) {
    r.message = "regularity violation: zeta <= 0";
  } else {
    r.message = "orthogonality violation at edge " + std::to_string(r.worst_edge);
  }
  return r;
}

struct SideMarkers {
  EdgeKind left = EdgeKind::Neumann;
  EdgeKind right = EdgeKind::Neumann;
  EdgeKind bottom = EdgeKind::Neumann;
  EdgeKind top = EdgeKind::Neumann;
};

struct Rect {
  double x0 = 0.0, y0 = 0.0, x1 = 1.0, y1 = 1.0;
};

/// Uniform rectangular mesh with centers at centroids; admissible with
/// zeta = 1/2 for nx,ny > 1.
inline Mesh build_structured_mesh(int nx, int ny, const Rect& rect = {},
                                  const SideMarkers& markers = {}) {
  if (nx < 1 || ny < 1) throw MeshError("build_structured_mesh: nx, ny must be >= 1");
  if (!(rect.x1 > rect.x0) || !(rect.y1 > rect.y0))
    throw MeshError("build_structured_mesh: degenerate rectangle");

  const double dx = (rect.x1 - rect.x0) / nx;
  const double dy = (rect.y1 - rect.y0) / ny;
  std::vector<Vec2> verts((nx + 1) * (ny + 1));
  auto vid = [nx](int i, int j) { return j * (nx + 1) + i; };
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i)
      verts[vid(i, j)] = {rect.x0 + i * dx, rect.y0 + j * dy};

  std::vector<std::vector<int>> cells;
  std::vector<Vec2> centers;
  cells.reserve(static_cast<std::size_t>(nx) * ny);
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      cells.push_back({vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)});
      centers.push_back({rect.x0 + (i + 0.5) * dx, rect.y0 + (j + 0.5) * dy});
    }

  std::vector<std::tuple<int, int, EdgeKind>> bnd;
  for (int j = 0; j < ny; ++j) {
    bnd.emplace_back(vid(0, j), vid(0, j + 1), markers.left);
    bnd.emplace_back(vid(nx, j), vid(nx, j + 1), markers.right);
  }
  for (int i = 0; i < nx; ++i) {
    bnd.emplace_back(vid(i, 0), vid(i + 1, 0), markers.bottom);
    bnd.emplace_back(vid(i, ny), vid(i + 1, ny), markers.top);
  }
  return finalize_mesh(std::move(verts), cells, centers, bnd);
}

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// Writes the plain-text mesh format (see README). Derived quantities are
/// not stored.
inline void save_mesh(const Mesh& m, std::ostream& out) {
  out << "# crossflux-mesh v1\n";
  out << "vertices " << m.vertices.size() << "\n";
  for (const Vec2& v : m.vertices)
    out << detail::format_double(v.x) << " " << detail::format_double(v.y) << "\n";
  out << "cells " << m.cells.size() << "\n";
  for (const Cell& c : m.cells) {
    out << c.vertices.size();
    for (int v : c.vertices) out << " " << v;
    out << " " << detail::format_double(c.center.x) << " " << detail::format_double(c.center.y) << "\n";
  }
  std::size_t nb = 0;
  for (const Edge& e : m.edges)
    if (!e.interior()) ++nb;
  out << "boundary " << nb << "\n";
  for (const Edge& e : m.edges)
    if (!e.interior())
      out << e.a << " " << e.b << " " << (e.kind == EdgeKind::Dirichlet ? "D" : "N") << "\n";
}

inline void save_mesh(const Mesh& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw MeshError("cannot open mesh file for writing: " + path);
  save_mesh(m, out);
}

/// Parses and finalizes the mesh file without the admissibility gate
/// (check-mesh wants a report even for inadmissible meshes).
inline Mesh load_mesh_unvalidated(std::istream& in) {
  std::string header;
  std::getline(in, header);
  if (header.find("# crossflux-mesh v1") != 0)
    throw MeshError("mesh file: missing '# crossflux-mesh v1' header");

  auto expect_keyword = [&](const char* kw) {
    std::string s;
    if (!(in >> s) || s != kw) throw MeshError(std::string("mesh file: expected '") + kw + "' section");
  };

  expect_keyword("vertices");
  std::size_t nv = 0;
  if (!(in >> nv)) throw MeshError("mesh file: bad vertex count");
  std::vector<Vec2> verts(nv);
  for (std::size_t i = 0; i < nv; ++i)
    if (!(in >> verts[i].x >> verts[i].y))
      throw MeshError("mesh file: bad vertex line " + std::to_string(i));

  expect_keyword("cells");
  std::size_t nc = 0;
  if (!(in >> nc)) throw MeshError("mesh file: bad cell count");
  std::vector<std::vector<int>> cells(nc);
  std::vector<Vec2> centers(nc);
  for (std::size_t k = 0; k < nc; ++k) {
    std::size_t nk = 0;
    if (!(in >> nk) || nk < 3) throw MeshError("mesh file: bad cell line " + std::to_string(k));
    cells[k].resize(nk);
    for (std::size_t s = 0; s < nk; ++s)
      if (!(in >> cells[k][s])) throw MeshError("mesh file: bad cell line " + std::to_string(k));
    if (!(in >> centers[k].x >> centers[k].y))
      throw MeshError("mesh file: bad center on cell line " + std::to_string(k));
  }

  expect_keyword("boundary");
  std::size_t nb = 0;
  if (!(in >> nb)) throw MeshError("mesh file: bad boundary count");
  std::vector<std::tuple<int, int, EdgeKind>> bnd(nb);
  for (std::size_t i = 0; i < nb; ++i) {
    int a, b;
    std::string marker;
    if (!(in >> a >> b >> marker) || (marker != "D" && marker != "N"))
      throw MeshError("mesh file: bad boundary line " + std::to_string(i));
    bnd[i] = {a, b, marker == "D" ? EdgeKind::Dirichlet : EdgeKind::Neumann};
  }

  return finalize_mesh(std::move(verts), cells, centers, bnd);
}

inline Mesh load_mesh_unvalidated(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MeshError("cannot open mesh file: " + path);
  return load_mesh_unvalidated(in);
}

inline Mesh load_mesh(std::istream& in, double orthogonality_tol = 1e-10) {
  Mesh m = load_mesh_unvalidated(in);
  AdmissibilityReport rep = check_admissibility(m, orthogonality_tol);
  if (!rep.pass) throw MeshError("mesh file: " + rep.message);
  return m;
}

inline Mesh load_mesh(const std::string& path, double orthogonality_tol = 1e-10) {
  std::ifstream in(path);
  if (!in) throw MeshError("cannot open mesh file: " + path);
  return load_mesh(in, orthogonality_tol);
}

/// D_{K,sigma}(v) = v_{K,sigma} - v_K seen from cell `from_cell`.
inline double diff(const Mesh& m, const CellField& f, int edge, int from_cell) {
  const Edge& e = m.edges[edge];
  switch (e.kind) {
    case EdgeKind::Interior: {
      const int other = m.neighbor(e, from_cell);
      return f.values[other] - f.values[from_cell];
    }
    case EdgeKind::Dirichlet:
      if (e.dirichlet_index >= static_cast<int>(f.dirichlet.size()))
        throw DomainError("diff: field is missing a Dirichlet trace on edge " + std::to_string(edge));
      return f.dirichlet[e.dirichlet_index] - f.values[from_cell];
    case EdgeKind::Neumann:
      return 0.0;
  }
  return 0.0;
}

/// D_{K,sigma}(v) from the stored K side of the edge.
inline double diff(const Mesh& m, const CellField& f, int edge) {
  return diff(m, f, edge, m.edges[edge].cell_k);
}

/// Discrete H^1 norm: sqrt of the quadratic form over interior edges plus
/// the cell-measure-weighted L^2 part.
inline double discrete_h1_norm(const Mesh& m, const CellField& f) {
  double acc = 0.0;
  for (const Edge& e : m.edges) {
    if (!e.interior()) continue;
    const double d = f.values[e.cell_k] - f.values[e.cell_l];
    acc += e.tau * d * d;
  }
  for (int k = 0; k < m.cell_count(); ++k)
    acc += m.cells[k].measure * f.values[k] * f.values[k];
  return std::sqrt(acc);
}

/// Discrete H^{-1} norm, the dual of discrete_h1_norm with respect to the
/// L^2 pairing: sqrt(v^T M A^{-1} M v) with A the H^1 quadratic form.
inline double discrete_hminus1_norm(const Mesh& m, const CellField& f) {
  const int n = m.cell_count();
  using Trip = Eigen::Triplet<double>;
  std::vector<Trip> trips;
  trips.reserve(4 * m.edges.size() + n);
  for (const Edge& e : m.edges) {
    if (!e.interior()) continue;
    trips.emplace_back(e.cell_k, e.cell_k, e.tau);
    trips.emplace_back(e.cell_l, e.cell_l, e.tau);
    trips.emplace_back(e.cell_k, e.cell_l, -e.tau);
    trips.emplace_back(e.cell_l, e.cell_k, -e.tau);
  }
  for (int k = 0; k < n; ++k) trips.emplace_back(k, k, m.cells[k].measure);

  Eigen::SparseMatrix<double> A(n, n);
  A.setFromTriplets(trips.begin(), trips.end());
  Eigen::VectorXd mv(n);
  for (int k = 0; k < n; ++k) mv[k] = m.cells[k].measure * f.values[k];

  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> llt(A);
  if (llt.info() != Eigen::Success)
    throw SolverError("discrete_hminus1_norm: H^1 form factorization failed");
  Eigen::VectorXd y = llt.solve(mv);
  const double q = mv.dot(y);
  return std::sqrt(std::max(0.0, q));
}

/// Piecewise constant gradient on the dual (diamond) mesh: on T_KL the
/// vector m(sigma)(v_L - v_K)/m(T_KL) * n_KL, zero on boundary diamonds.
/// Returned per edge id.
inline std::vector<Vec2> discrete_gradient(const Mesh& m, const CellField& f) {
  std::vector<Vec2> g(m.edges.size());
  for (std::size_t ei = 0; ei < m.edges.size(); ++ei) {
    const Edge& e = m.edges[ei];
    if (!e.interior()) continue;
    const double coeff = e.measure * (f.values[e.cell_l] - f.values[e.cell_k]) / e.diamond;
    g[ei] = e.normal * coeff;
  }
  return g;
}

struct RefinedMesh {
  Mesh mesh;
  std::vector<int> parent;  ///< coarse cell id for each fine cell
};

/// Regular 4-way refinement of an all-triangle mesh: each triangle splits
/// into four of the same shape via edge midpoints. Child centers are the
/// children's circumcenters; boundary markers are inherited.
inline RefinedMesh refine_triangles(const Mesh& m) {
  for (const Cell& c : m.cells)
    if (c.vertices.size() != 3)
      throw MeshError("refine_triangles: mesh must be all triangles");

  std::vector<Vec2> verts = m.vertices;
  std::map<std::pair<int, int>, int> midpoint_of;
  auto midpoint = [&](int a, int b) {
    auto key = detail::sorted_pair(a, b);
    auto it = midpoint_of.find(key);
    if (it != midpoint_of.end()) return it->second;
    const int id = static_cast<int>(verts.size());
    verts.push_back((m.vertices[a] + m.vertices[b]) * 0.5);
    midpoint_of.emplace(key, id);
    return id;
  };

  std::vector<std::vector<int>> cells;
  std::vector<Vec2> centers;
  std::vector<int> parent;
  cells.reserve(4 * m.cells.size());
  for (int k = 0; k < m.cell_count(); ++k) {
    const auto& v = m.cells[k].vertices;
    const int a = v[0], b = v[1], c = v[2];
    const int ab = midpoint(a, b), bc = midpoint(b, c), ca = midpoint(c, a);
    const int children[4][3] = {{a, ab, ca}, {ab, b, bc}, {ca, bc, c}, {ab, bc, ca}};
    for (const auto& ch : children) {
      cells.push_back({ch[0], ch[1], ch[2]});
      centers.push_back(circumcenter(verts[ch[0]], verts[ch[1]], verts[ch[2]]));
      parent.push_back(k);
    }
  }

  std::vector<std::tuple<int, int, EdgeKind>> bnd;
  for (const Edge& e : m.edges) {
    if (e.interior()) continue;
    const int mid = midpoint(e.a, e.b);
    bnd.emplace_back(e.a, mid, e.kind);
    bnd.emplace_back(mid, e.b, e.kind);
  }
  RefinedMesh out{finalize_mesh(std::move(verts), cells, centers, bnd), std::move(parent)};
  return out;
}

}  // namespace crossflux
