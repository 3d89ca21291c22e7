#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "crossflux/errors.hpp"
#include "crossflux/mesh.hpp"

namespace crossflux {

struct SpeciesParams {
  std::string name;
  double diffusion = 1.0;  ///< D_i > 0
  double charge = 0.0;     ///< z_i
};

/// Physical model bound to a mesh: species parameters, permanent background
/// charge f_K, and the immobile-species profile u_imm (both per cell; empty
/// vectors mean identically zero).
struct ModelConfig {
  std::vector<SpeciesParams> species;
  double beta = 1.0;     ///< scaled inverse thermal voltage, > 0
  double lambda2 = 1.0;  ///< scaled permittivity, > 0
  bool drift_enabled = true;
  std::vector<double> background_charge;  ///< f_K (without the immobile part)
  std::vector<double> immobile;           ///< u_imm,K in [0,1)
  std::vector<double> immobile_dirichlet; ///< immobile trace per Dirichlet edge

  int species_count() const { return static_cast<int>(species.size()); }

  bool equal_diffusion() const {
    for (const auto& s : species)
      if (s.diffusion != species.front().diffusion) return false;
    return true;
  }
  double common_diffusion() const { return species.front().diffusion; }

  double immobile_at(int k) const { return immobile.empty() ? 0.0 : immobile[k]; }
  double immobile_trace(int dirichlet_index) const {
    return immobile_dirichlet.empty() ? 0.0 : immobile_dirichlet[dirichlet_index];
  }

  /// Permanent charge density f_K entering the Poisson equation; the
  /// confined immobile ions carry charge -1/2 each.
  double permanent_charge(int k) const {
    double f = background_charge.empty() ? 0.0 : background_charge[k];
    return f - 0.5 * immobile_at(k);
  }

  void validate() const {
    if (species.empty()) throw ConfigError("model: at least one species required");
    for (const auto& s : species)
      if (!(s.diffusion > 0.0)) throw ConfigError("model: diffusion coefficients must be positive");
    if (!(beta > 0.0)) throw ConfigError("model: beta must be positive");
    if (!(lambda2 > 0.0)) throw ConfigError("model: lambda2 must be positive");
    for (double v : immobile)
      if (!(v >= 0.0 && v < 1.0)) throw ConfigError("model: immobile profile must lie in [0,1)");
  }
};

/// Dirichlet traces, indexed by the mesh's dirichlet_index.
struct BoundaryData {
  std::vector<std::vector<double>> concentration;  ///< [species][dirichlet edge]
  std::vector<double> potential;                   ///< phi trace per Dirichlet edge

  /// Solvent trace 1 - sum_i u_i - u_imm on a Dirichlet edge.
  double solvent_trace(const ModelConfig& config, int dirichlet_index) const {
    double s = 1.0 - config.immobile_trace(dirichlet_index);
    for (const auto& ui : concentration) s -= ui[dirichlet_index];
    return s;
  }

  void validate(const Mesh& mesh, const ModelConfig& config) const {
    const std::size_t nd = static_cast<std::size_t>(mesh.dirichlet_count());
    if (concentration.size() != static_cast<std::size_t>(config.species_count()))
      throw ConfigError("boundary data: species count mismatch");
    for (const auto& ui : concentration)
      if (ui.size() != nd) throw ConfigError("boundary data: trace count does not match Dirichlet edges");
    if (potential.size() != nd)
      throw ConfigError("boundary data: potential trace count does not match Dirichlet edges");
    for (std::size_t s = 0; s < concentration.size(); ++s)
      for (double v : concentration[s])
        if (!(v >= 0.0)) throw ConfigError("boundary data: negative concentration trace");
    for (std::size_t d = 0; d < nd; ++d)
      if (solvent_trace(config, static_cast<int>(d)) < 0.0)
        throw ConfigError("boundary data: concentration traces exceed the simplex on edge " +
                          std::to_string(d));
  }
};

/// Discrete solution at one time level: per-cell concentrations and potential.
/// Value type; cheap to copy and safe to move across threads.
struct State {
  int step = 0;
  double time = 0.0;
  std::vector<std::vector<double>> u;  ///< [species][cell]
  std::vector<double> phi;             ///< [cell]

  int species_count() const { return static_cast<int>(u.size()); }
  int cell_count() const { return static_cast<int>(phi.size()); }
};

inline State make_state(const Mesh& mesh, int n_species) {
  State s;
  s.u.assign(n_species, std::vector<double>(mesh.cell_count(), 0.0));
  s.phi.assign(mesh.cell_count(), 0.0);
  return s;
}

/// Solvent concentration u_0 = 1 - sum_i u_i - u_imm, per cell.
inline std::vector<double> solvent_concentration(const State& state, const ModelConfig& config) {
  std::vector<double> u0(state.cell_count());
  for (int k = 0; k < state.cell_count(); ++k) {
    double s = 1.0 - config.immobile_at(k);
    for (const auto& ui : state.u) s -= ui[k];
    u0[k] = s;
  }
  return u0;
}

/// Piecewise linear oxygen ramp of the channel experiment, constant in y:
/// full height on [0.45,0.55], linear on [0.35,0.45] and [0.55,0.65],
/// zero outside.
inline double oxygen_profile(const Vec2& p, double u_ox_max) {
  const double x = p.x;
  double ramp = 0.0;
  if (x >= 0.45 && x <= 0.55)
    ramp = 1.0;
  else if (x >= 0.35 && x < 0.45)
    ramp = 10.0 * (x - 0.35);
  else if (x > 0.55 && x <= 0.65)
    ramp = 10.0 * (0.65 - x);
  return u_ox_max * ramp;
}

/// Scaled maximal oxygen concentration (N_A / u_typ) * 52 mol/L with
/// N_A = 6.022e23 / mol and u_typ = 3.7037e25 / L.
inline double default_oxygen_max() {
  const double avogadro = 6.022e23;
  const double typical_concentration = 3.7037e25;
  return avogadro / typical_concentration * 52.0;
}

/// Entropy variables w_i = log(u_i/u_0) + beta z_i Phi for a strictly
/// interior simplex point (u_0 = 1 - sum u_i).
inline std::vector<double> entropy_variables(const std::vector<double>& u, double phi,
                                             const ModelConfig& config) {
  double u0 = 1.0;
  for (double ui : u) {
    if (!(ui > 0.0)) throw DomainError("entropy_variables: u_i must be strictly positive");
    u0 -= ui;
  }
  if (!(u0 > 0.0)) throw DomainError("entropy_variables: point lies on the simplex boundary");
  std::vector<double> w(u.size());
  for (std::size_t i = 0; i < u.size(); ++i)
    w[i] = std::log(u[i] / u0) + config.beta * config.species[i].charge * phi;
  return w;
}

/// Inverse map onto the open simplex: u_i = exp(a_i) / (1 + sum_j exp(a_j))
/// with a_i = w_i - beta z_i Phi, evaluated in shifted form so arbitrarily
/// large w never overflow and the result never leaves (0,1)^n.
inline std::vector<double> invert_entropy_variables(const std::vector<double>& w, double phi,
                                                    const ModelConfig& config) {
  std::vector<double> a(w.size());
  double shift = 0.0;  // max(0, a_i): the implicit solvent exponent is 0
  for (std::size_t i = 0; i < w.size(); ++i) {
    a[i] = w[i] - config.beta * config.species[i].charge * phi;
    shift = std::max(shift, a[i]);
  }
  double denom = std::exp(-shift);
  for (double ai : a) denom += std::exp(ai - shift);
  std::vector<double> u(w.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    u[i] = std::max(std::exp(a[i] - shift) / denom, std::numeric_limits<double>::min());
    sum += u[i];
  }
  // Deep saturation can round the sum up to 1; pull it back inside the
  // open simplex by the smallest representable margin.
  const double cap = 1.0 - 1e-15;
  if (sum >= cap)
    for (double& ui : u) ui *= cap / sum;
  return u;
}

/// Closed-form initial descriptor for one species.
struct InitialDescriptor {
  enum class Kind { Constant, LinearX, Table };
  Kind kind = Kind::Constant;
  double value = 0.0;               // Constant
  double left = 0.0, right = 0.0;   // LinearX over the mesh's x-range
  std::vector<double> table;        // Table: one value per cell

  double evaluate(const Vec2& p, double x0, double x1, int cell) const {
    switch (kind) {
      case Kind::Constant: return value;
      case Kind::LinearX: return left + (right - left) * (p.x - x0) / (x1 - x0);
      case Kind::Table: return table.at(static_cast<std::size_t>(cell));
    }
    return 0.0;
  }
};

/// Cell averages of the initial descriptors (midpoint rule: the value at
/// x_K, exact for constants and linear ramps on symmetric cells). Validates
/// nonnegativity and the simplex constraint per cell; the potential is left
/// zero and is expected to be filled by one Poisson solve.
inline State initial_concentrations(const Mesh& mesh, const ModelConfig& config,
                                    const std::vector<InitialDescriptor>& init) {
  if (init.size() != static_cast<std::size_t>(config.species_count()))
    throw ConfigError("initial data: descriptor count does not match species count");
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0;
  for (const Vec2& v : mesh.vertices) {
    x0 = std::min(x0, v.x);
    x1 = std::max(x1, v.x);
  }
  State s = make_state(mesh, config.species_count());
  for (int k = 0; k < mesh.cell_count(); ++k) {
    double sum = config.immobile_at(k);
    for (int i = 0; i < config.species_count(); ++i) {
      const double v = init[i].evaluate(mesh.cells[k].center, x0, x1, k);
      if (!(v >= 0.0))
        throw ConfigError("initial data: negative concentration in cell " + std::to_string(k));
      s.u[i][k] = v;
      sum += v;
    }
    if (sum > 1.0)
      throw ConfigError("initial data: concentrations exceed the simplex in cell " +
                        std::to_string(k));
  }
  return s;
}

}  // namespace crossflux
