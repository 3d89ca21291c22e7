#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "crossflux/scenario.hpp"

namespace {

constexpr int exit_config_error = 2;
constexpr int exit_mesh_error = 3;
constexpr int exit_solver_error = 4;
constexpr int exit_structure_error = 5;

int run_command(const std::string& config_path) {
  crossflux::Scenario sc = crossflux::load_scenario_file(config_path);
  auto outcome = crossflux::run_scenario(sc, &std::cout);
  std::cout << "artifacts written to " << outcome.directory.string() << "\n";
  return 0;
}

int check_mesh_command(const std::string& mesh_path, double tol) {
  crossflux::Mesh mesh = crossflux::load_mesh_unvalidated(mesh_path);
  auto rep = crossflux::check_admissibility(mesh, tol);
  std::cout << "cells: " << mesh.cell_count() << "\n"
            << "edges: " << mesh.edge_count() << " (dirichlet " << mesh.dirichlet_count()
            << ")\n"
            << "zeta: " << rep.zeta << "\n"
            << "max orthogonality defect: " << rep.max_orthogonality_defect << "\n"
            << (rep.pass ? "admissible" : rep.message) << "\n";
  if (!rep.pass) throw crossflux::MeshError(rep.message);
  return 0;
}

int converge_command(const std::string& config_path, const std::vector<int>& levels, int ref,
                     const std::string& output) {
  crossflux::Scenario sc = crossflux::load_scenario_file(config_path);
  auto study = crossflux::convergence_study(sc, levels, ref, &std::cout);
  crossflux::write_convergence_csv(study, sc.config.species_count(), std::cout);
  if (!output.empty()) {
    std::ofstream out(output);
    crossflux::write_convergence_csv(study, sc.config.species_count(), out);
  }
  return 0;
}

int make_channel_mesh_command(int level, const std::string& output) {
  crossflux::Mesh mesh = crossflux::channel_mesh(level);
  crossflux::save_mesh(mesh, output);
  std::cout << "wrote " << mesh.cell_count() << " cells to " << output << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"crossflux: finite-volume solver for degenerate cross-diffusion ion transport"};
  app.require_subcommand(1);

  std::string config_path, mesh_path, output;
  double tol = 1e-10;
  std::vector<int> levels{0, 1, 2};
  int ref_level = 3;
  int channel_level = 0;

  auto* run_cmd = app.add_subcommand("run", "run a scenario config");
  run_cmd->add_option("config", config_path, "scenario config (JSON)")->required();

  auto* check_cmd = app.add_subcommand("check-mesh", "validate mesh admissibility");
  check_cmd->add_option("mesh", mesh_path, "mesh file")->required();
  check_cmd->add_option("--tol", tol, "orthogonality tolerance");

  auto* conv_cmd = app.add_subcommand("converge", "grid refinement study on nested meshes");
  conv_cmd->add_option("config", config_path, "scenario config (JSON, channel mesh)")->required();
  conv_cmd->add_option("--levels", levels, "study levels")->delimiter(',');
  conv_cmd->add_option("--ref", ref_level, "reference level (strictly finer)");
  conv_cmd->add_option("-o,--output", output, "write the study table as CSV");

  auto* mesh_cmd = app.add_subcommand("make-channel-mesh", "generate the channel mesh");
  mesh_cmd->add_option("--level", channel_level, "refinement level");
  mesh_cmd->add_option("-o,--output", output, "output mesh file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) return run_command(config_path);
    if (check_cmd->parsed()) return check_mesh_command(mesh_path, tol);
    if (conv_cmd->parsed()) return converge_command(config_path, levels, ref_level, output);
    if (mesh_cmd->parsed()) return make_channel_mesh_command(channel_level, output);
  } catch (const crossflux::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return exit_config_error;
  } catch (const crossflux::MeshError& e) {
    std::cerr << "mesh error: " << e.what() << "\n";
    return exit_mesh_error;
  } catch (const crossflux::StructureError& e) {
    std::cerr << "structure violation: " << e.what() << "\n";
    return exit_structure_error;
  } catch (const crossflux::SolverError& e) {
    std::cerr << "solver error: " << e.what() << "\n";
    return exit_solver_error;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
