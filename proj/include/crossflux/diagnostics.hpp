#pragma once

#include <cmath>
#include <limits>
#include <ostream>
#include <span>
#include <vector>

#include "crossflux/model.hpp"
#include "crossflux/scheme.hpp"

namespace crossflux {

namespace detail {

/// h(z) = z(log z - 1) + 1 with the continuous extension h(0) = 1.
inline double entropy_density(double z) {
  if (z == 0.0) return 1.0;
  return z * (std::log(z) - 1.0) + 1.0;
}

inline double xlogx_ratio(double num, double den) {
  if (num == 0.0) return 0.0;  // 0 log(0/x) := 0
  if (den == 0.0) throw DomainError("relative entropy: steady state vanishes where the state does not");
  return num * std::log(num / den);
}

/// Mean diffusion coefficient used by the entropy production display.
inline double production_coefficient(const ModelConfig& config) {
  double d = 0.0;
  for (const auto& s : config.species) d += s.diffusion;
  return d / config.species_count();
}

}  // namespace detail

/// Discrete entropy H = sum_K m(K) sum_{i=0..n} h(u_{i,K}).
inline double entropy(const State& state, const Mesh& mesh, const ModelConfig& config) {
  const auto u0 = solvent_concentration(state, config);
  double h = 0.0;
  for (int k = 0; k < mesh.cell_count(); ++k) {
    double cell = 0.0;
    for (int i = 0; i < config.species_count(); ++i) {
      if (state.u[i][k] < 0.0) throw DomainError("entropy: negative concentration");
      cell += detail::entropy_density(state.u[i][k]);
    }
    if (u0[k] < 0.0) throw DomainError("entropy: negative solvent concentration");
    cell += detail::entropy_density(u0[k]);
    h += mesh.cells[k].measure * cell;
  }
  return h;
}

/// Discrete entropy production
/// I = D sum_int tau (4 sum_i u0s (sqrt(uK)-sqrt(uL))^2
///                    + 4 (sqrt(u0K)-sqrt(u0L))^2 + (u0K-u0L)^2).
/// Uses the common diffusion coefficient (mean when they differ; the
/// entropy theory assumes equal coefficients).
inline double entropy_production(const State& state, const Mesh& mesh,
                                 const ModelConfig& config) {
  const auto u0 = solvent_concentration(state, config);
  for (double v : u0)
    if (v < 0.0) throw DomainError("entropy_production: negative solvent concentration");
  double acc = 0.0;
  for (const Edge& e : mesh.edges) {
    if (!e.interior()) continue;
    const double u0k = u0[e.cell_k], u0l = u0[e.cell_l];
    const double u0s = std::max(u0k, u0l);
    double edge = 0.0;
    for (int i = 0; i < config.species_count(); ++i) {
      const double uk = state.u[i][e.cell_k], ul = state.u[i][e.cell_l];
      if (uk < 0.0 || ul < 0.0) throw DomainError("entropy_production: negative concentration");
      const double ds = std::sqrt(uk) - std::sqrt(ul);
      edge += 4.0 * u0s * ds * ds;
    }
    const double d0 = std::sqrt(u0k) - std::sqrt(u0l);
    edge += 4.0 * d0 * d0 + (u0k - u0l) * (u0k - u0l);
    acc += e.tau * edge;
  }
  return detail::production_coefficient(config) * acc;
}

/// Entropy-inequality defect (H^k - H^{k-1})/dt + I^k; nonpositive along
/// solutions of the drift-free equal-diffusion scheme. Reported, never
/// enforced here.
inline double check_entropy_inequality(const State& state_new, const State& state_old, double dt,
                                       const Mesh& mesh, const ModelConfig& config) {
  const double h_new = entropy(state_new, mesh, config);
  const double h_old = entropy(state_old, mesh, config);
  return (h_new - h_old) / dt + entropy_production(state_new, mesh, config);
}

/// Relative entropy with respect to a steady state sharing the boundary
/// data: sum_K m(K) sum_{i=0..n} u log(u/u_inf)
/// + (lambda^2/2) sum_{edges} tau D(phi - phi_inf)^2. Dirichlet trace
/// differences vanish for shared boundary data; Neumann edges contribute
/// nothing.
inline double relative_entropy(const State& state, const State& steady, const Mesh& mesh,
                               const ModelConfig& config) {
  const auto u0 = solvent_concentration(state, config);
  const auto u0s = solvent_concentration(steady, config);
  double e = 0.0;
  for (int k = 0; k < mesh.cell_count(); ++k) {
    double cell = detail::xlogx_ratio(u0[k], u0s[k]);
    for (int i = 0; i < config.species_count(); ++i)
      cell += detail::xlogx_ratio(state.u[i][k], steady.u[i][k]);
    e += mesh.cells[k].measure * cell;
  }
  double dirichlet_energy = 0.0;
  for (const Edge& ed : mesh.edges) {
    double d = 0.0;
    switch (ed.kind) {
      case EdgeKind::Interior:
        d = (state.phi[ed.cell_l] - steady.phi[ed.cell_l]) -
            (state.phi[ed.cell_k] - steady.phi[ed.cell_k]);
        break;
      case EdgeKind::Dirichlet:
        d = -(state.phi[ed.cell_k] - steady.phi[ed.cell_k]);
        break;
      case EdgeKind::Neumann:
        break;
    }
    dirichlet_energy += ed.tau * d * d;
  }
  return e + 0.5 * config.lambda2 * dirichlet_energy;
}

/// Gajewski semimetric d_eps(u,v) = sum_K m(K) sum_i
/// (h_eps(u) + h_eps(v) - 2 h_eps((u+v)/2)), h_eps(z) = (z+eps)(log(z+eps)-1)+1.
inline double gajewski_semimetric(const State& u, const State& v, double eps, const Mesh& mesh) {
  auto h_eps = [eps](double z) { return (z + eps) * (std::log(z + eps) - 1.0) + 1.0; };
  double d = 0.0;
  for (int k = 0; k < mesh.cell_count(); ++k) {
    double cell = 0.0;
    for (int i = 0; i < u.species_count(); ++i) {
      const double a = u.u[i][k], b = v.u[i][k];
      cell += h_eps(a) + h_eps(b) - 2.0 * h_eps(0.5 * (a + b));
    }
    d += mesh.cells[k].measure * cell;
  }
  return d;
}

/// Space-time a priori quantities over a trajectory window s^0..s^N.
struct AprioriNorms {
  double u0_sqrt = 0.0;                        ///< ||sqrt(u0)||_{1,T,dt}
  std::vector<double> u0_sqrt_u;               ///< ||sqrt(u0) u_i||_{1,T,dt} per species
  std::vector<double> time_derivative_dual_sq; ///< sum_k dt ||du_i/dt||_{-1,T}^2; [0]=solvent
};

inline AprioriNorms apriori_norms(std::span<const State> window, double dt, const Mesh& mesh,
                                  const ModelConfig& config) {
  if (window.size() < 2) throw DomainError("apriori_norms: need at least two states");
  const int n = config.species_count();
  AprioriNorms out;
  out.u0_sqrt_u.assign(n, 0.0);
  out.time_derivative_dual_sq.assign(n + 1, 0.0);
  double u0_acc = 0.0;
  std::vector<double> ui_acc(n, 0.0);

  for (std::size_t k = 1; k < window.size(); ++k) {
    const State& s = window[k];
    const State& prev = window[k - 1];
    const auto u0 = solvent_concentration(s, config);
    const auto u0_prev = solvent_concentration(prev, config);

    CellField sqrt_u0(std::vector<double>(mesh.cell_count()));
    for (int c = 0; c < mesh.cell_count(); ++c) sqrt_u0.values[c] = std::sqrt(std::max(0.0, u0[c]));
    const double n1 = discrete_h1_norm(mesh, sqrt_u0);
    u0_acc += dt * n1 * n1;

    for (int i = 0; i < n; ++i) {
      CellField f(std::vector<double>(mesh.cell_count()));
      for (int c = 0; c < mesh.cell_count(); ++c) f.values[c] = sqrt_u0.values[c] * s.u[i][c];
      const double ni = discrete_h1_norm(mesh, f);
      ui_acc[i] += dt * ni * ni;
    }

    CellField d0(std::vector<double>(mesh.cell_count()));
    for (int c = 0; c < mesh.cell_count(); ++c) d0.values[c] = (u0[c] - u0_prev[c]) / dt;
    const double dual0 = discrete_hminus1_norm(mesh, d0);
    out.time_derivative_dual_sq[0] += dt * dual0 * dual0;
    for (int i = 0; i < n; ++i) {
      CellField di(std::vector<double>(mesh.cell_count()));
      for (int c = 0; c < mesh.cell_count(); ++c) di.values[c] = (s.u[i][c] - prev.u[i][c]) / dt;
      const double dual = discrete_hminus1_norm(mesh, di);
      out.time_derivative_dual_sq[i + 1] += dt * dual * dual;
    }
  }
  out.u0_sqrt = std::sqrt(u0_acc);
  for (int i = 0; i < n; ++i) out.u0_sqrt_u[i] = std::sqrt(ui_acc[i]);
  return out;
}

/// Per-step structural quantities; NaN marks values without a defined
/// reference (defect at step 0, relative entropy without a steady state).
struct DiagnosticsReport {
  long step = 0;
  double time = 0.0;
  double entropy_value = 0.0;
  double production = 0.0;
  double entropy_defect = std::numeric_limits<double>::quiet_NaN();
  double relative = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> mass;
  double min_u0 = 0.0, max_u0 = 0.0;
  std::vector<double> min_u, max_u;
  int newton_iterations = 0;
  double clip_magnitude = 0.0;
};

inline DiagnosticsReport make_report(const State& state, const State* previous, double dt,
                                     const Mesh& mesh, const ModelConfig& config,
                                     const State* steady = nullptr) {
  DiagnosticsReport r;
  r.step = state.step;
  r.time = state.time;
  r.entropy_value = entropy(state, mesh, config);
  r.production = entropy_production(state, mesh, config);
  if (previous)
    r.entropy_defect = (r.entropy_value - entropy(*previous, mesh, config)) / dt + r.production;
  if (steady) r.relative = relative_entropy(state, *steady, mesh, config);

  const int n = config.species_count();
  r.mass.assign(n, 0.0);
  r.min_u.assign(n, std::numeric_limits<double>::infinity());
  r.max_u.assign(n, -std::numeric_limits<double>::infinity());
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < mesh.cell_count(); ++k) {
      r.mass[i] += mesh.cells[k].measure * state.u[i][k];
      r.min_u[i] = std::min(r.min_u[i], state.u[i][k]);
      r.max_u[i] = std::max(r.max_u[i], state.u[i][k]);
    }
  const auto u0 = solvent_concentration(state, config);
  r.min_u0 = std::numeric_limits<double>::infinity();
  r.max_u0 = -std::numeric_limits<double>::infinity();
  for (double v : u0) {
    r.min_u0 = std::min(r.min_u0, v);
    r.max_u0 = std::max(r.max_u0, v);
  }
  return r;
}

/// CSV emission, one row per accepted step plus the initial row.
inline void write_diagnostics_header(std::ostream& out, int n_species) {
  out << "step,time,H,I,entropy_defect,E_rel";
  for (int i = 1; i <= n_species; ++i) out << ",mass_" << i;
  out << ",min_u0,max_u0";
  for (int i = 1; i <= n_species; ++i) out << ",min_u_" << i << ",max_u_" << i;
  out << ",newton_iters,max_clip\n";
}

inline void write_diagnostics_row(std::ostream& out, const DiagnosticsReport& r) {
  auto num = [](double v) { return detail::format_double(v); };
  out << r.step << "," << num(r.time) << "," << num(r.entropy_value) << "," << num(r.production)
      << "," << num(r.entropy_defect) << "," << num(r.relative);
  for (double m : r.mass) out << "," << num(m);
  out << "," << num(r.min_u0) << "," << num(r.max_u0);
  for (std::size_t i = 0; i < r.min_u.size(); ++i)
    out << "," << num(r.min_u[i]) << "," << num(r.max_u[i]);
  out << "," << r.newton_iterations << "," << num(r.clip_magnitude) << "\n";
}

}  // namespace crossflux
