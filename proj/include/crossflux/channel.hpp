#pragma once

#include <cmath>
#include <map>
#include <queue>
#include <vector>

#include "crossflux/mesh.hpp"

namespace crossflux {

/// Hourglass channel geometry in scaled coordinates: two tapering
/// reservoirs joined by a narrow neck between x = 1/3 and x = 2/3,
/// symmetric about the midline. The numbers are the drawn proportions of
/// the experimental setup; they are constants of this artifact.
struct ChannelGeometry {
  double reservoir_height = 2.0 / 3.0;
  double neck_height = 2.0 / 15.0;
  double neck_begin = 1.0 / 3.0;
  double neck_end = 2.0 / 3.0;
  double midline = 1.0 / 3.0;
  int base_columns = 43;  ///< level-0 lattice columns; ~1k cells

  double height_at(double x) const {
    if (x <= neck_begin) {
      const double t = std::clamp(x / neck_begin, 0.0, 1.0);
      return reservoir_height + (neck_height - reservoir_height) * t;
    }
    if (x >= neck_end) {
      const double t = std::clamp((1.0 - x) / (1.0 - neck_end), 0.0, 1.0);
      return reservoir_height + (neck_height - reservoir_height) * t;
    }
    return neck_height;
  }

  bool inside(const Vec2& p) const {
    if (p.x < 0.0 || p.x > 1.0) return false;
    return std::abs(p.y - midline) <= 0.5 * height_at(p.x);
  }
};

namespace detail {

/// Level-0 channel mesh: the subset of a uniform equilateral-triangle
/// lattice (vertical edges aligned with the x = 0 and x = 1 walls) whose
/// centroids fall inside the nominal hourglass. Cell centers are the
/// circumcenters, so the mesh is admissible with a level-independent
/// regularity constant; the vertical ends carry the Dirichlet marker.
inline Mesh build_channel_base(const ChannelGeometry& geo) {
  const int columns = geo.base_columns;
  const double width = 1.0 / columns;
  const double pitch = 2.0 * width / std::sqrt(3.0);  // equilateral lattice

  // lattice vertex = (column, half-integer row), materialized on demand
  std::map<std::pair<int, int>, int> vertex_id;  // (column, 2*row)
  std::vector<Vec2> verts;
  auto vertex = [&](int c, int twice_r) {
    auto it = vertex_id.find({c, twice_r});
    if (it != vertex_id.end()) return it->second;
    const int id = static_cast<int>(verts.size());
    verts.push_back({static_cast<double>(c) / columns, 0.5 * twice_r * pitch});
    vertex_id.emplace(std::pair{c, twice_r}, id);
    return id;
  };

  const int row_lo = -1;
  const int row_hi = static_cast<int>(std::ceil(geo.reservoir_height / pitch)) + 1;
  std::vector<std::vector<int>> cells;
  std::vector<Vec2> centers;
  for (int c = 0; c < columns; ++c) {
    const int off = (c % 2);  // odd columns sit half a pitch higher
    for (int j = row_lo; j <= row_hi; ++j) {
      const int r2 = 2 * j + off;
      // right-pointing: vertical base on column c, apex on column c+1
      {
        const int a = vertex(c, r2), b = vertex(c + 1, r2 + 1), d = vertex(c, r2 + 2);
        const Vec2 centroid = (verts[a] + verts[b] + verts[d]) / 3.0;
        if (geo.inside(centroid)) {
          cells.push_back({a, b, d});
          centers.push_back(circumcenter(verts[a], verts[b], verts[d]));
        }
      }
      // left-pointing: vertical base on column c+1, apex on column c
      {
        const int a = vertex(c + 1, r2 - 1), b = vertex(c + 1, r2 + 1), d = vertex(c, r2);
        const Vec2 centroid = (verts[a] + verts[b] + verts[d]) / 3.0;
        if (geo.inside(centroid)) {
          cells.push_back({a, b, d});
          centers.push_back(circumcenter(verts[a], verts[b], verts[d]));
        }
      }
    }
  }
  if (cells.empty()) throw MeshError("channel mesh: no cells selected");

  // boundary = edges used by exactly one selected triangle
  std::map<std::pair<int, int>, int> edge_use;
  for (const auto& cell : cells)
    for (int s = 0; s < 3; ++s) {
      auto key = detail::sorted_pair(cell[s], cell[(s + 1) % 3]);
      ++edge_use[key];
    }
  const double xtol = 0.25 * width;
  std::vector<std::tuple<int, int, EdgeKind>> bnd;
  for (const auto& [key, uses] : edge_use) {
    if (uses != 1) continue;
    const Vec2& a = verts[key.first];
    const Vec2& b = verts[key.second];
    const bool left = std::abs(a.x) < xtol && std::abs(b.x) < xtol;
    const bool right = std::abs(a.x - 1.0) < xtol && std::abs(b.x - 1.0) < xtol;
    bnd.emplace_back(key.first, key.second, left || right ? EdgeKind::Dirichlet : EdgeKind::Neumann);
  }

  Mesh mesh = finalize_mesh(std::move(verts), cells, centers, bnd);

  // one connected component, reachable across interior edges
  std::vector<char> seen(mesh.cell_count(), 0);
  std::queue<int> todo;
  todo.push(0);
  seen[0] = 1;
  int reached = 1;
  while (!todo.empty()) {
    const int k = todo.front();
    todo.pop();
    for (int ei : mesh.cells[k].edges) {
      const Edge& e = mesh.edges[ei];
      if (!e.interior()) continue;
      const int other = mesh.neighbor(e, k);
      if (!seen[other]) {
        seen[other] = 1;
        ++reached;
        todo.push(other);
      }
    }
  }
  if (reached != mesh.cell_count())
    throw MeshError("channel mesh: generation produced a disconnected mesh");
  return mesh;
}

}  // namespace detail

/// Nested hierarchy of channel meshes; parents[l] maps cells of level l+1
/// onto cells of level l (regular 4-way refinement, exact nesting).
struct ChannelHierarchy {
  std::vector<Mesh> meshes;
  std::vector<std::vector<int>> parents;

  /// Composed map from level `fine` cells to their ancestors at `coarse`.
  std::vector<int> ancestors(int fine, int coarse) const {
    std::vector<int> map(meshes[fine].cell_count());
    for (int k = 0; k < meshes[fine].cell_count(); ++k) map[k] = k;
    for (int l = fine - 1; l >= coarse; --l)
      for (int& k : map) k = parents[l][k];
    return map;
  }
};

inline ChannelHierarchy build_channel_hierarchy(int max_level, const ChannelGeometry& geo = {}) {
  ChannelHierarchy h;
  h.meshes.push_back(detail::build_channel_base(geo));
  for (int l = 0; l < max_level; ++l) {
    RefinedMesh r = refine_triangles(h.meshes.back());
    h.meshes.push_back(std::move(r.mesh));
    h.parents.push_back(std::move(r.parent));
  }
  return h;
}

/// Channel mesh at one refinement level (level 0 targets ~1k cells; each
/// level quadruples the cell count).
inline Mesh channel_mesh(int level, const ChannelGeometry& geo = {}) {
  if (level < 0) throw MeshError("channel_mesh: level must be >= 0");
  return std::move(build_channel_hierarchy(level, geo).meshes.back());
}

}  // namespace crossflux
