#pragma once

#include <cmath>
#include <vector>

#include "crossflux/linalg.hpp"
#include "crossflux/model.hpp"
#include "crossflux/util.hpp"

namespace crossflux {

/// Per-edge, per-species numerical fluxes and their double-upwind pieces,
/// stored once per edge in the K->L orientation. Neumann edges carry exact
/// zeros.
struct FluxField {
  int n_species = 0;
  int n_edges = 0;
  std::vector<double> flux;      ///< F_{i,K,sigma}
  std::vector<double> drift;     ///< V_{i,K,sigma}
  std::vector<double> upwind;    ///< u_{i,sigma}
  std::vector<double> u0_hat;    ///< hat u_{0,sigma,i}
  std::vector<double> u0_sigma;  ///< per edge: max of the two solvent values

  double f(int edge, int i) const { return flux[static_cast<std::size_t>(edge) * n_species + i]; }
  double v(int edge, int i) const { return drift[static_cast<std::size_t>(edge) * n_species + i]; }
  double up(int edge, int i) const { return upwind[static_cast<std::size_t>(edge) * n_species + i]; }
  double hat(int edge, int i) const { return u0_hat[static_cast<std::size_t>(edge) * n_species + i]; }
};

/// Coupled implicit-Euler residual: one balance per cell and species plus
/// the Poisson balance per cell.
struct Residual {
  std::vector<std::vector<double>> species;  ///< [i][cell]
  std::vector<double> poisson;               ///< [cell]

  double max_abs() const {
    double m = 0.0;
    for (const auto& r : species)
      for (double v : r) m = std::max(m, std::abs(v));
    for (double v : poisson) m = std::max(m, std::abs(v));
    return m;
  }
};

namespace detail {

/// Values seen across one edge from the stored K side. For Neumann edges
/// the across values equal the K values, which zeroes every difference.
struct EdgeView {
  double u0_k = 0.0, u0_a = 0.0;
  double phi_k = 0.0, phi_a = 0.0;
  bool neumann = false;
  bool interior = false;
};

inline EdgeView edge_view(const Mesh& mesh, int edge, const State& state,
                          const std::vector<double>& u0, const ModelConfig& config,
                          const BoundaryData& bc) {
  const Edge& e = mesh.edges[edge];
  EdgeView v;
  v.u0_k = u0[e.cell_k];
  v.phi_k = state.phi[e.cell_k];
  switch (e.kind) {
    case EdgeKind::Interior:
      v.interior = true;
      v.u0_a = u0[e.cell_l];
      v.phi_a = state.phi[e.cell_l];
      break;
    case EdgeKind::Dirichlet:
      v.u0_a = bc.solvent_trace(config, e.dirichlet_index);
      v.phi_a = bc.potential[e.dirichlet_index];
      break;
    case EdgeKind::Neumann:
      v.neumann = true;
      v.u0_a = v.u0_k;
      v.phi_a = v.phi_k;
      break;
  }
  return v;
}

inline double across_concentration(const Mesh& mesh, int edge, const State& state, int i,
                                   const BoundaryData& bc) {
  const Edge& e = mesh.edges[edge];
  switch (e.kind) {
    case EdgeKind::Interior: return state.u[i][e.cell_l];
    case EdgeKind::Dirichlet: return bc.concentration[i][e.dirichlet_index];
    case EdgeKind::Neumann: return state.u[i][e.cell_k];
  }
  return 0.0;
}

}  // namespace detail

/// Drift part V_{i,K,sigma} = D(u_0) - hat(u_0) beta z_i D(Phi) with the
/// potential upwinding on the sign of z_i D(Phi); ties take the K side.
/// With drift disabled the potential term is dropped.
inline double drift_part(const State& state, const Mesh& mesh, int edge, int i,
                         const ModelConfig& config, const BoundaryData& bc) {
  const auto u0 = solvent_concentration(state, config);
  const auto v = detail::edge_view(mesh, edge, state, u0, config, bc);
  if (v.neumann) return 0.0;
  const double du0 = v.u0_a - v.u0_k;
  if (!config.drift_enabled) return du0;
  const double z = config.species[i].charge;
  const double dphi = v.phi_a - v.phi_k;
  const double hat = (z * dphi >= 0.0) ? v.u0_k : v.u0_a;
  return du0 - hat * config.beta * z * dphi;
}

/// Double-upwind species flux F_{i,K,sigma}; zero on Neumann edges.
inline double species_flux(const State& state, const Mesh& mesh, int edge, int i,
                           const ModelConfig& config, const BoundaryData& bc) {
  const Edge& e = mesh.edges[edge];
  if (e.kind == EdgeKind::Neumann) return 0.0;
  const auto u0 = solvent_concentration(state, config);
  const auto v = detail::edge_view(mesh, edge, state, u0, config, bc);
  const double u_k = state.u[i][e.cell_k];
  const double u_a = detail::across_concentration(mesh, edge, state, i, bc);
  const double du0 = v.u0_a - v.u0_k;
  double drift = du0;
  if (config.drift_enabled) {
    const double z = config.species[i].charge;
    const double dphi = v.phi_a - v.phi_k;
    const double hat = (z * dphi >= 0.0) ? v.u0_k : v.u0_a;
    drift -= hat * config.beta * z * dphi;
  }
  const double u_up = (drift >= 0.0) ? u_k : u_a;
  const double u0s = std::max(v.u0_k, v.u0_a);
  return -e.tau * config.species[i].diffusion * (u0s * (u_a - u_k) - u_up * drift);
}

/// Square-root reformulation of the drift-free flux on an interior edge:
/// tau D { sqrt(u0s)(sqrt(u0K) uK - sqrt(u0L) uL)
///         - u_up (sqrt(u0K)-sqrt(u0L)) (sqrt(u0s) + sqrt(u0K)+sqrt(u0L)) }.
/// Algebraically identical to species_flux when the drift term vanishes.
inline double species_flux_sqrt_form(const State& state, const Mesh& mesh, int edge, int i,
                                     const ModelConfig& config) {
  const Edge& e = mesh.edges[edge];
  if (!e.interior())
    throw DomainError("species_flux_sqrt_form: interior edges only");
  const auto u0 = solvent_concentration(state, config);
  const double u0k = u0[e.cell_k], u0l = u0[e.cell_l];
  if (u0k < 0.0 || u0l < 0.0)
    throw DomainError("species_flux_sqrt_form: negative solvent concentration");
  const double uk = state.u[i][e.cell_k], ul = state.u[i][e.cell_l];
  const double u_up = (u0k - u0l <= 0.0) ? uk : ul;
  const double sk = std::sqrt(u0k), sl = std::sqrt(u0l);
  const double ss = std::sqrt(std::max(u0k, u0l));
  return e.tau * config.species[i].diffusion *
         (ss * (sk * uk - sl * ul) - u_up * (sk - sl) * (ss + sk + sl));
}

/// Assembles all per-edge fluxes for one state. Embarrassingly parallel
/// over edges; output slots are fixed, so results do not depend on the
/// thread count.
inline FluxField assemble_fluxes(const State& state, const Mesh& mesh, const ModelConfig& config,
                                 const BoundaryData& bc) {
  const int n = config.species_count();
  FluxField ff;
  ff.n_species = n;
  ff.n_edges = mesh.edge_count();
  const std::size_t total = static_cast<std::size_t>(ff.n_edges) * n;
  ff.flux.assign(total, 0.0);
  ff.drift.assign(total, 0.0);
  ff.upwind.assign(total, 0.0);
  ff.u0_hat.assign(total, 0.0);
  ff.u0_sigma.assign(ff.n_edges, 0.0);

  const auto u0 = solvent_concentration(state, config);
  parallel_for(ff.n_edges, [&](int begin, int end) {
    for (int ei = begin; ei < end; ++ei) {
      const Edge& e = mesh.edges[ei];
      if (e.kind == EdgeKind::Neumann) continue;
      const auto v = detail::edge_view(mesh, ei, state, u0, config, bc);
      const double u0s = std::max(v.u0_k, v.u0_a);
      ff.u0_sigma[ei] = u0s;
      const double du0 = v.u0_a - v.u0_k;
      const double dphi = config.drift_enabled ? v.phi_a - v.phi_k : 0.0;
      for (int i = 0; i < n; ++i) {
        const double z = config.species[i].charge;
        const double hat = (z * dphi >= 0.0) ? v.u0_k : v.u0_a;
        const double drift = du0 - hat * config.beta * z * dphi;
        const double u_k = state.u[i][e.cell_k];
        const double u_a = detail::across_concentration(mesh, ei, state, i, bc);
        const double u_up = (drift >= 0.0) ? u_k : u_a;
        const std::size_t idx = static_cast<std::size_t>(ei) * n + i;
        ff.u0_hat[idx] = hat;
        ff.drift[idx] = drift;
        ff.upwind[idx] = u_up;
        ff.flux[idx] = -e.tau * config.species[i].diffusion * (u0s * (u_a - u_k) - u_up * drift);
      }
    }
  });
  return ff;
}

/// Poisson balance per cell:
/// -lambda^2 sum_sigma tau D_{K,sigma}(Phi) - m(K)(sum_i z_i u_i + f_K).
inline std::vector<double> poisson_residual(const State& state, const Mesh& mesh,
                                            const ModelConfig& config, const BoundaryData& bc) {
  std::vector<double> res(mesh.cell_count(), 0.0);
  for (int k = 0; k < mesh.cell_count(); ++k) {
    double flux = 0.0;
    for (int ei : mesh.cells[k].edges) {
      const Edge& e = mesh.edges[ei];
      switch (e.kind) {
        case EdgeKind::Interior:
          flux += e.tau * (state.phi[mesh.neighbor(e, k)] - state.phi[k]);
          break;
        case EdgeKind::Dirichlet:
          flux += e.tau * (bc.potential[e.dirichlet_index] - state.phi[k]);
          break;
        case EdgeKind::Neumann:
          break;
      }
    }
    double charge = config.permanent_charge(k);
    for (int i = 0; i < config.species_count(); ++i)
      charge += config.species[i].charge * state.u[i][k];
    res[k] = -config.lambda2 * flux - mesh.cells[k].measure * charge;
  }
  return res;
}

/// With pure Neumann boundary the Poisson operator has the constant null
/// space; the residual/Jacobian replace cell 0's Poisson row by the
/// zero-mean constraint sum_K m(K) Phi_K / m(Omega).
inline bool poisson_gauge_fixed(const Mesh& mesh) { return mesh.pure_neumann(); }

/// Implicit Euler residual, fully implicit in the new state.
inline Residual coupled_residual(const State& state_new, const State& state_old, double dt,
                                 const Mesh& mesh, const ModelConfig& config,
                                 const BoundaryData& bc) {
  const int n = config.species_count();
  Residual r;
  r.species.assign(n, std::vector<double>(mesh.cell_count(), 0.0));
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < mesh.cell_count(); ++k)
      r.species[i][k] = mesh.cells[k].measure * (state_new.u[i][k] - state_old.u[i][k]) / dt;

  const FluxField ff = assemble_fluxes(state_new, mesh, config, bc);
  for (int ei = 0; ei < mesh.edge_count(); ++ei) {
    const Edge& e = mesh.edges[ei];
    if (e.kind == EdgeKind::Neumann) continue;
    for (int i = 0; i < n; ++i) {
      const double f = ff.f(ei, i);
      r.species[i][e.cell_k] += f;
      if (e.interior()) r.species[i][e.cell_l] -= f;  // conservativity
    }
  }

  r.poisson = poisson_residual(state_new, mesh, config, bc);
  if (poisson_gauge_fixed(mesh)) {
    double mean = 0.0;
    for (int k = 0; k < mesh.cell_count(); ++k) mean += mesh.cells[k].measure * state_new.phi[k];
    r.poisson[0] = mean / mesh.total_measure;
  }
  return r;
}

/// Unknown ordering: cell-major blocks (u_1..u_n, Phi).
inline int unknown_index(int cell, int i, int n_species) { return cell * (n_species + 1) + i; }
inline int phi_index(int cell, int n_species) { return cell * (n_species + 1) + n_species; }
inline int system_size(const Mesh& mesh, int n_species) {
  return mesh.cell_count() * (n_species + 1);
}

/// Exact Jacobian of coupled_residual at state_new, with the upwind branch
/// choices frozen (piecewise-smooth derivative). Row/column layout follows
/// unknown_index/phi_index.
inline SparseTriplets assemble_jacobian(const State& state_new, double dt, const Mesh& mesh,
                                        const ModelConfig& config, const BoundaryData& bc) {
  const int n = config.species_count();
  const int size = system_size(mesh, n);
  const bool gauge = poisson_gauge_fixed(mesh);
  SparseTriplets J(size, size);
  J.reserve(static_cast<std::size_t>(mesh.edge_count()) * (4u * n * (n + 2)) +
            static_cast<std::size_t>(mesh.cell_count()) * (2u * n + 5));

  const auto u0 = solvent_concentration(state_new, config);

  // Time-derivative block.
  for (int k = 0; k < mesh.cell_count(); ++k)
    for (int i = 0; i < n; ++i)
      J.add(unknown_index(k, i, n), unknown_index(k, i, n), mesh.cells[k].measure / dt);

  // Flux contributions, one edge at a time. Threaded assembly fills
  // per-edge buffers concatenated in edge order, so the triplet stream is
  // identical for any thread count.
  const bool threaded = assembly_threads() > 1;
  std::vector<SparseTriplets> per_edge(threaded ? mesh.edge_count() : 0);
  parallel_for(mesh.edge_count(), [&](int begin, int end) {
    for (int ei = begin; ei < end; ++ei) {
      const Edge& e = mesh.edges[ei];
      if (e.kind == EdgeKind::Neumann) continue;
      SparseTriplets& T = threaded ? per_edge[ei] : J;
      const auto v = detail::edge_view(mesh, ei, state_new, u0, config, bc);
      const int K = e.cell_k;
      const int L = e.cell_l;  // -1 on Dirichlet edges
      const double u0s = std::max(v.u0_k, v.u0_a);
      const bool max_is_k = v.u0_k >= v.u0_a;
      const double du0 = v.u0_a - v.u0_k;
      const double dphi = config.drift_enabled ? v.phi_a - v.phi_k : 0.0;

      for (int i = 0; i < n; ++i) {
        const double D = config.species[i].diffusion;
        const double z = config.species[i].charge;
        const double bz = config.beta * z;
        const bool hat_is_k = (z * dphi >= 0.0);
        const double hat = hat_is_k ? v.u0_k : v.u0_a;
        const double drift = du0 - hat * bz * dphi;
        const double u_k = state_new.u[i][K];
        const double u_a = detail::across_concentration(mesh, ei, state_new, i, bc);
        const bool up_is_k = (drift >= 0.0);
        const double u_up = up_is_k ? u_k : u_a;
        const double scale = -e.tau * D;

        const int row_k = unknown_index(K, i, n);
        const int row_l = v.interior ? unknown_index(L, i, n) : -1;
        // zero entries are kept: the sparsity pattern must not depend on
        // the state, so factorizations can reuse their symbolic analysis
        auto emit = [&](int colm, double dF) {
          T.add(row_k, colm, dF);
          if (row_l >= 0) T.add(row_l, colm, -dF);
        };

        // d/d u_{j,K} and (interior) d/d u_{j,L}: u0 depends on every species.
        for (int j = 0; j < n; ++j) {
          const double du0s_dk = max_is_k ? -1.0 : 0.0;
          const double dhat_dk = hat_is_k ? -1.0 : 0.0;
          const double ddrift_dk = 1.0 - dhat_dk * bz * dphi;
          const double dup_dk = (up_is_k && i == j) ? 1.0 : 0.0;
          const double duk_dk = (i == j) ? 1.0 : 0.0;
          emit(unknown_index(K, j, n),
               scale * (du0s_dk * (u_a - u_k) + u0s * (0.0 - duk_dk) - dup_dk * drift -
                        u_up * ddrift_dk));
          if (v.interior) {
            const double du0s_dl = max_is_k ? 0.0 : -1.0;
            const double dhat_dl = hat_is_k ? 0.0 : -1.0;
            const double ddrift_dl = -1.0 - dhat_dl * bz * dphi;
            const double dup_dl = (!up_is_k && i == j) ? 1.0 : 0.0;
            const double dua_dl = (i == j) ? 1.0 : 0.0;
            emit(unknown_index(L, j, n),
                 scale * (du0s_dl * (u_a - u_k) + u0s * dua_dl - dup_dl * drift -
                          u_up * ddrift_dl));
          }
        }

        if (config.drift_enabled && z != 0.0) {
          // d drift / d phi: dphi depends on phi_K (and phi_L when interior).
          const double ddrift_dphik = hat * bz;
          emit(phi_index(K, n), scale * (-u_up * ddrift_dphik));
          if (v.interior) emit(phi_index(L, n), scale * (-u_up * (-hat * bz)));
        }
      }
    }
  });
  if (threaded)
    for (const auto& T : per_edge) J.append(T);

  // Poisson rows: linear and state-independent apart from the charge term.
  for (int k = 0; k < mesh.cell_count(); ++k) {
    if (gauge && k == 0) continue;
    const int row = phi_index(k, n);
    double diag = 0.0;
    for (int ei : mesh.cells[k].edges) {
      const Edge& e = mesh.edges[ei];
      if (e.kind == EdgeKind::Neumann) continue;
      diag += config.lambda2 * e.tau;
      if (e.interior()) J.add(row, phi_index(mesh.neighbor(e, k), n), -config.lambda2 * e.tau);
    }
    J.add(row, row, diag);
    for (int i = 0; i < n; ++i)
      J.add(row, unknown_index(k, i, n), -mesh.cells[k].measure * config.species[i].charge);
  }
  if (gauge) {
    const int row = phi_index(0, n);
    for (int k = 0; k < mesh.cell_count(); ++k)
      J.add(row, phi_index(k, n), mesh.cells[k].measure / mesh.total_measure);
  }
  return J;
}

}  // namespace crossflux
