#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "crossflux/channel.hpp"
#include "crossflux/diagnostics.hpp"
#include "crossflux/solver.hpp"
#include "crossflux/vtk.hpp"

namespace crossflux {

inline std::uint64_t fnv1a(std::string_view data) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

/// Left/right boundary values, applied per Dirichlet edge by the sign of
/// the edge midpoint relative to the domain's x midpoint.
struct TraceDescriptor {
  double left = 0.0;
  double right = 0.0;
};

/// A fully specified experiment: mesh, model, data, solver and output
/// policy. The raw descriptors are kept so the scenario can be rebound to
/// a refined mesh (convergence studies).
struct Scenario {
  std::string name = "scenario";
  Mesh mesh;
  ModelConfig config;
  BoundaryData bc;
  std::vector<InitialDescriptor> init;
  TimeLoopOptions time;
  NewtonOptions newton;

  // raw descriptors (mesh-independent)
  std::vector<TraceDescriptor> bc_desc;
  TraceDescriptor phi_desc;
  double background_constant = 0.0;
  bool oxygen_ramp = false;
  double oxygen_max = 0.0;

  // mesh provenance
  bool mesh_is_channel = false;
  int channel_level = 0;
  ChannelGeometry channel_geometry;

  // output policy
  std::filesystem::path output_dir = ".";
  std::vector<long> snapshot_steps;
  long snapshot_stride = 0;
  bool entropy_enforcement = false;
  bool emit_csv = true;

  std::uint64_t mesh_hash = 0;
  std::uint64_t config_hash = 0;
};

namespace detail {

inline double domain_x_mid(const Mesh& mesh) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const Vec2& v : mesh.vertices) {
    lo = std::min(lo, v.x);
    hi = std::max(hi, v.x);
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

/// Realizes the mesh-dependent pieces (immobile profile, background
/// charge, boundary traces) on the scenario's current mesh.
inline void bind_scenario_to_mesh(Scenario& sc) {
  const int n = static_cast<int>(sc.bc_desc.size());
  const Mesh& mesh = sc.mesh;

  sc.config.background_charge.assign(mesh.cell_count(), sc.background_constant);
  if (sc.oxygen_ramp) {
    sc.config.immobile.resize(mesh.cell_count());
    for (int k = 0; k < mesh.cell_count(); ++k)
      sc.config.immobile[k] = oxygen_profile(mesh.cells[k].center, sc.oxygen_max);
    sc.config.immobile_dirichlet.resize(mesh.dirichlet_count());
    for (int d = 0; d < mesh.dirichlet_count(); ++d) {
      const Edge& e = mesh.edges[mesh.dirichlet_edges[d]];
      const Vec2 mid = (mesh.vertices[e.a] + mesh.vertices[e.b]) * 0.5;
      sc.config.immobile_dirichlet[d] = oxygen_profile(mid, sc.oxygen_max);
    }
  } else {
    sc.config.immobile.clear();
    sc.config.immobile_dirichlet.clear();
  }

  const double xmid = detail::domain_x_mid(mesh);
  sc.bc.concentration.assign(n, std::vector<double>(mesh.dirichlet_count(), 0.0));
  sc.bc.potential.assign(mesh.dirichlet_count(), 0.0);
  for (int d = 0; d < mesh.dirichlet_count(); ++d) {
    const Edge& e = mesh.edges[mesh.dirichlet_edges[d]];
    const double x = 0.5 * (mesh.vertices[e.a].x + mesh.vertices[e.b].x);
    const bool left = x < xmid;
    for (int i = 0; i < n; ++i)
      sc.bc.concentration[i][d] = left ? sc.bc_desc[i].left : sc.bc_desc[i].right;
    sc.bc.potential[d] = left ? sc.phi_desc.left : sc.phi_desc.right;
  }

  std::ostringstream mesh_text;
  save_mesh(mesh, mesh_text);
  sc.mesh_hash = fnv1a(mesh_text.str());
}

inline Scenario load_scenario(const nlohmann::json& j,
                              const std::filesystem::path& base_dir = ".") {
  Scenario sc;
  try {
    sc.name = j.value("name", std::string("scenario"));

    if (!j.contains("species") || !j["species"].is_array() || j["species"].empty())
      throw ConfigError("config: 'species' must be a non-empty array");
    for (const auto& sp : j["species"]) {
      SpeciesParams p;
      p.name = sp.value("name", "species_" + std::to_string(sc.config.species.size() + 1));
      if (!sp.contains("z") || !sp["z"].is_number())
        throw ConfigError("config: species '" + p.name + "': 'z' must be a number");
      p.charge = sp["z"].get<double>();
      if (!sp.contains("D") || !sp["D"].is_number())
        throw ConfigError("config: species '" + p.name + "': 'D' must be a number");
      p.diffusion = sp["D"].get<double>();
      sc.config.species.push_back(p);

      InitialDescriptor init;
      if (sp.contains("init")) {
        const auto& ij = sp["init"];
        const std::string type = ij.value("type", "constant");
        if (type == "constant") {
          init.kind = InitialDescriptor::Kind::Constant;
          init.value = ij.value("value", 0.0);
        } else if (type == "linear_x") {
          init.kind = InitialDescriptor::Kind::LinearX;
          init.left = ij.value("left", 0.0);
          init.right = ij.value("right", 0.0);
        } else if (type == "table") {
          init.kind = InitialDescriptor::Kind::Table;
          init.table = ij.value("values", std::vector<double>{});
        } else {
          throw ConfigError("config: species '" + p.name + "': unknown init type '" + type + "'");
        }
      }
      sc.init.push_back(init);

      TraceDescriptor bc;
      if (sp.contains("bc")) {
        const auto& bj = sp["bc"];
        if (bj.contains("value")) {
          bc.left = bc.right = bj["value"].get<double>();
        } else {
          bc.left = bj.value("left", 0.0);
          bc.right = bj.value("right", 0.0);
        }
      }
      sc.bc_desc.push_back(bc);
    }

    sc.config.beta = j.value("beta", 1.0);
    sc.config.lambda2 = j.value("lambda2", 1.0);
    sc.background_constant = j.value("background_charge", 0.0);

    if (j.contains("immobile")) {
      const std::string type = j["immobile"].value("type", "none");
      if (type == "oxygen_ramp") {
        sc.oxygen_ramp = true;
        sc.oxygen_max = j["immobile"].value("u_max", default_oxygen_max());
      } else if (type != "none") {
        throw ConfigError("config: unknown immobile profile type '" + type + "'");
      }
    }

    if (j.contains("phi_bc")) {
      sc.phi_desc.left = j["phi_bc"].value("left", 0.0);
      sc.phi_desc.right = j["phi_bc"].value("right", 0.0);
    }

    if (j.contains("flags")) {
      sc.config.drift_enabled = j["flags"].value("drift_enabled", true);
      sc.entropy_enforcement = j["flags"].value("entropy_check", false);
    }

    if (j.contains("time")) {
      const auto& tj = j["time"];
      sc.time.dt = tj.value("dt", 1e-3);
      if (tj.contains("t_end")) sc.time.t_end = tj["t_end"].get<double>();
      if (tj.contains("max_steps")) sc.time.max_steps = tj["max_steps"].get<long>();
      sc.time.steady_tol = tj.value("steady_tol", 1e-12);
      if (!(sc.time.dt > 0.0)) throw ConfigError("config: time.dt must be positive");
    }

    if (j.contains("newton")) {
      const auto& nj = j["newton"];
      sc.newton.abs_tol = nj.value("abs_tol", sc.newton.abs_tol);
      sc.newton.max_iter = nj.value("max_iter", sc.newton.max_iter);
      sc.newton.projection_enabled = nj.value("projection", sc.newton.projection_enabled);
      const std::string linear = nj.value("linear", "auto");
      if (linear == "direct")
        sc.newton.linear = NewtonOptions::Linear::Direct;
      else if (linear == "iterative")
        sc.newton.linear = NewtonOptions::Linear::Iterative;
      else if (linear == "auto")
        sc.newton.linear = NewtonOptions::Linear::Auto;
      else
        throw ConfigError("config: newton.linear must be auto, direct, or iterative");
    }

    if (!j.contains("mesh")) throw ConfigError("config: 'mesh' section is required");
    const auto& mj = j["mesh"];
    if (mj.contains("file")) {
      sc.mesh = load_mesh((base_dir / mj["file"].get<std::string>()).string());
    } else if (mj.contains("structured")) {
      const auto& st = mj["structured"];
      const int nx = st.value("nx", 0), ny = st.value("ny", 0);
      Rect rect;
      if (st.contains("rect")) {
        const auto r = st["rect"].get<std::vector<double>>();
        if (r.size() != 4) throw ConfigError("config: mesh.structured.rect needs 4 numbers");
        rect = {r[0], r[1], r[2], r[3]};
      }
      SideMarkers mk;
      auto side = [&](const char* key, EdgeKind fallback) {
        if (!st.contains("markers")) return fallback;
        const std::string v = st["markers"].value(key, "N");
        if (v == "D") return EdgeKind::Dirichlet;
        if (v == "N") return EdgeKind::Neumann;
        throw ConfigError(std::string("config: marker '") + key + "' must be D or N");
      };
      mk.left = side("left", EdgeKind::Neumann);
      mk.right = side("right", EdgeKind::Neumann);
      mk.bottom = side("bottom", EdgeKind::Neumann);
      mk.top = side("top", EdgeKind::Neumann);
      sc.mesh = build_structured_mesh(nx, ny, rect, mk);
    } else if (mj.contains("channel")) {
      sc.mesh_is_channel = true;
      sc.channel_level = mj["channel"].value("level", 0);
      sc.mesh = channel_mesh(sc.channel_level, sc.channel_geometry);
    } else {
      throw ConfigError("config: mesh must specify 'file', 'structured', or 'channel'");
    }

    if (j.contains("output")) {
      const auto& oj = j["output"];
      sc.output_dir = base_dir / oj.value("directory", std::string("."));
      if (oj.contains("snapshot_steps"))
        sc.snapshot_steps = oj["snapshot_steps"].get<std::vector<long>>();
      sc.snapshot_stride = oj.value("snapshot_stride", 0L);
      sc.emit_csv = oj.value("csv", true);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  sc.config_hash = fnv1a(j.dump());
  bind_scenario_to_mesh(sc);
  sc.config.validate();
  sc.bc.validate(sc.mesh, sc.config);
  return sc;
}

inline Scenario load_scenario_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config parse error in " + path.string() + ": " + e.what());
  }
  return load_scenario(j, path.parent_path().empty() ? "." : path.parent_path());
}

/// Constant steady state determined by the initial masses; defined for the
/// drift-free, equal-diffusion, pure-Neumann setting where trajectories
/// relax to it.
inline std::optional<State> steady_reference(const Scenario& sc, const State& initial) {
  if (!sc.mesh.pure_neumann() || sc.config.drift_enabled || !sc.config.equal_diffusion())
    return std::nullopt;
  if (!sc.config.immobile.empty()) return std::nullopt;
  State steady = make_state(sc.mesh, sc.config.species_count());
  for (int i = 0; i < sc.config.species_count(); ++i) {
    double m = 0.0;
    for (int k = 0; k < sc.mesh.cell_count(); ++k)
      m += sc.mesh.cells[k].measure * initial.u[i][k];
    for (auto& v : steady.u[i]) v = m / sc.mesh.total_measure;
  }
  steady.phi = solve_poisson(sc.mesh, sc.config, sc.bc, steady.u);
  return steady;
}

struct RunOutcome {
  RunResult result;
  std::filesystem::path directory;
};

/// Executes a scenario and writes diagnostics.csv, snapshots, the final
/// state, and a run manifest into the output directory.
inline RunOutcome run_scenario(const Scenario& sc, std::ostream* log = nullptr) {
  namespace fs = std::filesystem;
  fs::create_directories(sc.output_dir);

  State s0 = initial_state(sc.mesh, sc.config, sc.bc, sc.init);
  const std::optional<State> steady = steady_reference(sc, s0);

  std::ofstream csv;
  if (sc.emit_csv) {
    csv.open(sc.output_dir / "diagnostics.csv");
    write_diagnostics_header(csv, sc.config.species_count());
    write_diagnostics_row(csv, make_report(s0, nullptr, sc.time.dt, sc.mesh, sc.config,
                                           steady ? &*steady : nullptr));
  }

  auto snapshot_path = [&](long step) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "snapshot_%06ld.vtk", step);
    return sc.output_dir / buf;
  };
  auto wants_snapshot = [&](long step) {
    if (sc.snapshot_stride > 0 && step % sc.snapshot_stride == 0) return true;
    for (long t : sc.snapshot_steps)
      if (t == step) return true;
    return false;
  };
  if (wants_snapshot(0)) write_vtk_snapshot(s0, sc.mesh, sc.config, snapshot_path(0).string());

  long accepted = 0;
  StepCallback callback = [&](const State& prev, const StepReport& rep, double) {
    ++accepted;
    if (sc.emit_csv) {
      DiagnosticsReport row = make_report(rep.state, &prev, sc.time.dt, sc.mesh, sc.config,
                                          steady ? &*steady : nullptr);
      row.newton_iterations = rep.newton_iterations;
      row.clip_magnitude = rep.clip_magnitude;
      write_diagnostics_row(csv, row);
      if (sc.entropy_enforcement) {
        const double h_prev = entropy(prev, sc.mesh, sc.config);
        if (row.entropy_defect > 1e-8 * (1.0 + std::abs(h_prev) / sc.time.dt))
          throw StructureError("entropy inequality violated at step " +
                               std::to_string(rep.state.step));
      }
    }
    if (wants_snapshot(rep.state.step))
      write_vtk_snapshot(rep.state, sc.mesh, sc.config, snapshot_path(rep.state.step).string());
  };

  RunOutcome out;
  out.directory = sc.output_dir;
  out.result = run(s0, sc.mesh, sc.config, sc.bc, sc.time, sc.newton, callback);

  write_vtk_snapshot(out.result.final_state, sc.mesh, sc.config,
                     (sc.output_dir / "final.vtk").string());
  {
    std::ofstream fin(sc.output_dir / "final_state.txt");
    const State& f = out.result.final_state;
    fin << "# crossflux-state v1\n";
    fin << "cells " << f.cell_count() << " species " << f.species_count() << "\n";
    for (int k = 0; k < f.cell_count(); ++k) {
      for (int i = 0; i < f.species_count(); ++i)
        fin << detail::format_double(f.u[i][k]) << " ";
      fin << detail::format_double(f.phi[k]) << "\n";
    }
  }
  {
    nlohmann::json manifest;
    manifest["name"] = sc.name;
    char hex[32];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(sc.mesh_hash));
    manifest["mesh_hash"] = hex;
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(sc.config_hash));
    manifest["config_hash"] = hex;
    manifest["cells"] = sc.mesh.cell_count();
    manifest["species"] = sc.config.species_count();
    manifest["steps"] = out.result.steps;
    switch (out.result.reason) {
      case StopReason::Steady: manifest["stop_reason"] = "steady"; break;
      case StopReason::TimeEnd: manifest["stop_reason"] = "t_end"; break;
      case StopReason::MaxSteps: manifest["stop_reason"] = "max_steps"; break;
    }
    std::ofstream mf(sc.output_dir / "run_manifest.json");
    mf << manifest.dump(2) << "\n";
  }
  if (log)
    *log << sc.name << ": " << out.result.steps << " steps, stop="
         << (out.result.reason == StopReason::Steady
                 ? "steady"
                 : out.result.reason == StopReason::TimeEnd ? "t_end" : "max_steps")
         << "\n";
  return out;
}

/// Mass-consistent aggregation of fine-cell values onto coarse cells via
/// the exact-nesting ancestor map.
inline std::vector<double> aggregate_onto(const Mesh& coarse, const Mesh& fine,
                                          const std::vector<int>& ancestor,
                                          const std::vector<double>& fine_values) {
  std::vector<double> out(coarse.cell_count(), 0.0);
  for (int k = 0; k < fine.cell_count(); ++k)
    out[ancestor[k]] += fine.cells[k].measure * fine_values[k];
  for (int k = 0; k < coarse.cell_count(); ++k) out[k] /= coarse.cells[k].measure;
  return out;
}

inline double l1_distance(const Mesh& mesh, const std::vector<double>& a,
                          const std::vector<double>& b) {
  double acc = 0.0;
  for (int k = 0; k < mesh.cell_count(); ++k)
    acc += mesh.cells[k].measure * std::abs(a[k] - b[k]);
  return acc;
}

struct ConvergenceStudy {
  std::vector<int> levels;
  int reference_level = 0;
  std::vector<long> snapshot_steps;
  std::vector<double> h;                                  ///< per study level
  std::vector<std::vector<std::vector<double>>> errors;   ///< [snapshot][level][species]
  std::vector<std::vector<double>> slopes;                ///< [snapshot][species]
};

/// Runs the scenario on nested channel meshes and measures the discrete L1
/// distance to the reference aggregated onto each coarse level.
inline ConvergenceStudy convergence_study(const Scenario& base, const std::vector<int>& levels,
                                          int reference_level, std::ostream* log = nullptr) {
  if (!base.mesh_is_channel)
    throw ConfigError("convergence_study: scenario must use the channel mesh");
  for (int l : levels)
    if (l >= reference_level)
      throw ConfigError("convergence_study: reference level must be strictly finer");

  ConvergenceStudy study;
  study.levels = levels;
  study.reference_level = reference_level;
  study.snapshot_steps = base.snapshot_steps;
  if (study.snapshot_steps.empty()) study.snapshot_steps = {50, 1400};
  long last_step = 0;
  for (long s : study.snapshot_steps) last_step = std::max(last_step, s);

  ChannelHierarchy hierarchy = build_channel_hierarchy(reference_level, base.channel_geometry);
  const int n = base.config.species_count();

  auto capture = [&](int level) {
    Scenario sc = base;
    sc.mesh = hierarchy.meshes[level];
    bind_scenario_to_mesh(sc);
    sc.time.max_steps = last_step;
    sc.time.t_end = std::numeric_limits<double>::infinity();
    sc.time.steady_tol = 0.0;  // run through both snapshots

    std::vector<State> snaps;
    State s0 = initial_state(sc.mesh, sc.config, sc.bc, sc.init);
    StepCallback cb = [&](const State&, const StepReport& rep, double) {
      for (long t : study.snapshot_steps)
        if (rep.state.step == t) snaps.push_back(rep.state);
    };
    if (log) *log << "level " << level << " (" << sc.mesh.cell_count() << " cells)...\n";
    run(s0, sc.mesh, sc.config, sc.bc, sc.time, sc.newton, cb);
    if (snaps.size() != study.snapshot_steps.size())
      throw SolverError("convergence_study: run ended before the snapshot steps");
    return snaps;
  };

  const auto ref_snaps = capture(reference_level);
  study.errors.assign(study.snapshot_steps.size(), {});
  for (int l : levels) {
    const auto snaps = capture(l);
    const auto ancestor = hierarchy.ancestors(reference_level, l);
    const Mesh& coarse = hierarchy.meshes[l];
    study.h.push_back(coarse.mesh_size);
    for (std::size_t s = 0; s < study.snapshot_steps.size(); ++s) {
      std::vector<double> per_species(n);
      for (int i = 0; i < n; ++i) {
        const auto agg =
            aggregate_onto(coarse, hierarchy.meshes[reference_level], ancestor, ref_snaps[s].u[i]);
        per_species[i] = l1_distance(coarse, snaps[s].u[i], agg);
      }
      study.errors[s].push_back(per_species);
    }
  }

  // least-squares slope of log(error) against log(h), per snapshot/species
  study.slopes.assign(study.snapshot_steps.size(), std::vector<double>(n, 0.0));
  for (std::size_t s = 0; s < study.snapshot_steps.size(); ++s)
    for (int i = 0; i < n; ++i) {
      double sx = 0, sy = 0, sxx = 0, sxy = 0;
      const auto m = static_cast<double>(levels.size());
      for (std::size_t l = 0; l < levels.size(); ++l) {
        const double x = std::log(study.h[l]);
        const double y = std::log(std::max(study.errors[s][l][i], 1e-300));
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
      }
      study.slopes[s][i] = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    }
  return study;
}

inline void write_convergence_csv(const ConvergenceStudy& study, int n_species,
                                  std::ostream& out) {
  out << "snapshot,level,h";
  for (int i = 1; i <= n_species; ++i) out << ",l1_error_" << i;
  out << "\n";
  for (std::size_t s = 0; s < study.snapshot_steps.size(); ++s)
    for (std::size_t l = 0; l < study.levels.size(); ++l) {
      out << study.snapshot_steps[s] << "," << study.levels[l] << ","
          << detail::format_double(study.h[l]);
      for (int i = 0; i < n_species; ++i)
        out << "," << detail::format_double(study.errors[s][l][i]);
      out << "\n";
    }
  for (std::size_t s = 0; s < study.snapshot_steps.size(); ++s) {
    out << "slope_" << study.snapshot_steps[s];
    for (int i = 0; i < n_species; ++i)
      out << "," << detail::format_double(study.slopes[s][i]);
    out << "\n";
  }
}

}  // namespace crossflux
