#pragma once

#include <fstream>
#include <ostream>
#include <string>

#include "crossflux/mesh.hpp"
#include "crossflux/model.hpp"

namespace crossflux {

/// Legacy VTK unstructured-grid snapshot with cell data u_0..u_n, Phi,
/// u_imm, in that order. Cell ordering follows the mesh; values are
/// written with full precision so a text parse reproduces them.
inline void write_vtk_snapshot(const State& state, const Mesh& mesh, const ModelConfig& config,
                               std::ostream& out) {
  out << "# vtk DataFile Version 3.0\n";
  out << "crossflux snapshot step " << state.step << "\n";
  out << "ASCII\nDATASET UNSTRUCTURED_GRID\n";

  out << "POINTS " << mesh.vertices.size() << " double\n";
  for (const Vec2& v : mesh.vertices)
    out << detail::format_double(v.x) << " " << detail::format_double(v.y) << " 0\n";

  std::size_t list_size = 0;
  for (const Cell& c : mesh.cells) list_size += c.vertices.size() + 1;
  out << "CELLS " << mesh.cells.size() << " " << list_size << "\n";
  for (const Cell& c : mesh.cells) {
    out << c.vertices.size();
    for (int v : c.vertices) out << " " << v;
    out << "\n";
  }
  out << "CELL_TYPES " << mesh.cells.size() << "\n";
  for (const Cell& c : mesh.cells) {
    int type = 7;  // VTK_POLYGON
    if (c.vertices.size() == 3) type = 5;  // VTK_TRIANGLE
    if (c.vertices.size() == 4) type = 9;  // VTK_QUAD
    out << type << "\n";
  }

  out << "CELL_DATA " << mesh.cells.size() << "\n";
  auto scalars = [&](const std::string& name, auto&& value_at) {
    out << "SCALARS " << name << " double 1\nLOOKUP_TABLE default\n";
    for (int k = 0; k < mesh.cell_count(); ++k)
      out << detail::format_double(value_at(k)) << "\n";
  };
  const auto u0 = solvent_concentration(state, config);
  scalars("u_0", [&](int k) { return u0[k]; });
  for (int i = 0; i < config.species_count(); ++i)
    scalars("u_" + std::to_string(i + 1), [&](int k) { return state.u[i][k]; });
  scalars("Phi", [&](int k) { return state.phi[k]; });
  scalars("u_imm", [&](int k) { return config.immobile_at(k); });
}

inline void write_vtk_snapshot(const State& state, const Mesh& mesh, const ModelConfig& config,
                               const std::string& path) {
  std::ofstream out(path);
  if (!out) throw MeshError("cannot open VTK output file: " + path);
  write_vtk_snapshot(state, mesh, config, out);
}

}  // namespace crossflux
