#pragma once

#include <functional>
#include <limits>
#include <optional>
#include <string>

#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <Eigen/UmfPackSupport>

#include "crossflux/scheme.hpp"

namespace crossflux {

struct NewtonOptions {
  double abs_tol = 1e-10;      ///< residual infinity-norm target
  int max_iter = 50;
  double damping_factor = 0.5;
  double min_step = std::pow(0.5, 20);
  bool projection_enabled = false;  ///< clip concentrations into [0,1] after updates

  enum class Linear { Auto, Direct, Iterative };
  Linear linear = Linear::Auto;
  /// Auto switches from per-iteration LU to BiCGSTAB preconditioned by a
  /// frozen single-precision LU above this many unknowns.
  int iterative_threshold = 12000;
};

struct TimeLoopOptions {
  double dt = 1e-3;
  double t_end = std::numeric_limits<double>::infinity();
  long max_steps = std::numeric_limits<long>::max();
  double steady_tol = 1e-12;  ///< discrete L2 distance of consecutive levels
};

/// Newton failure carrying the best iterate reached.
struct NewtonFailure : SolverError {
  State best;
  double best_norm;
  NewtonFailure(const std::string& msg, State s, double n)
      : SolverError(msg), best(std::move(s)), best_norm(n) {}
};

namespace detail {

inline Eigen::SparseMatrix<double> to_eigen(const SparseTriplets& t) {
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) trips.emplace_back(t.row[i], t.col[i], t.val[i]);
  Eigen::SparseMatrix<double> A(t.rows, t.cols);
  A.setFromTriplets(trips.begin(), trips.end());
  return A;
}

}  // namespace detail

/// Sparse direct solve (LU) with iterative refinement; the solution
/// satisfies ||Ax-b||_inf <= 1e-12 (1 + ||b||_inf).
inline std::vector<double> solve_linear(const SparseTriplets& triplets,
                                        const std::vector<double>& rhs) {
  if (triplets.rows != triplets.cols)
    throw SolverError("solve_linear: matrix must be square");
  if (static_cast<int>(rhs.size()) != triplets.rows)
    throw SolverError("solve_linear: dimension mismatch");
  Eigen::SparseMatrix<double> A = detail::to_eigen(triplets);
  Eigen::Map<const Eigen::VectorXd> b(rhs.data(), static_cast<Eigen::Index>(rhs.size()));

  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu(A);
  if (lu.info() != Eigen::Success)
    throw SolverError("solve_linear: factorization failed (" + lu.lastErrorMessage() + ")");
  Eigen::VectorXd x = lu.solve(b);

  const double target = 1e-12 * (1.0 + b.lpNorm<Eigen::Infinity>());
  for (int pass = 0; pass < 3; ++pass) {
    Eigen::VectorXd r = b - A * x;
    if (r.lpNorm<Eigen::Infinity>() <= target) break;
    x += lu.solve(r);
  }
  if ((b - A * x).lpNorm<Eigen::Infinity>() > target)
    throw SolverError("solve_linear: refined residual exceeds tolerance; matrix is ill-conditioned");
  return {x.data(), x.data() + x.size()};
}

namespace detail {

/// Preconditioned BiCGSTAB on the infinity norm; returns the iteration
/// count or -1 on breakdown/stagnation.
template <typename Mat, typename Precond>
int bicgstab(const Mat& a, const Eigen::VectorXd& b, Eigen::VectorXd& x, const Precond& precond,
             double target, int max_it) {
  const Eigen::Index n = a.rows();
  x = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd r = b;
  if (r.lpNorm<Eigen::Infinity>() <= target) return 0;
  const Eigen::VectorXd rhat = r;
  double rho = 1.0, alpha = 1.0, omega = 1.0;
  Eigen::VectorXd v = Eigen::VectorXd::Zero(n), p = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd phat(n), s(n), shat(n), t(n);
  for (int it = 1; it <= max_it; ++it) {
    const double rho1 = rhat.dot(r);
    if (!(std::abs(rho1) > 1e-300)) return -1;
    if (it == 1)
      p = r;
    else {
      const double beta = (rho1 / rho) * (alpha / omega);
      p = r + beta * (p - omega * v);
    }
    phat = precond.solve(p);
    v.noalias() = a * phat;
    const double rv = rhat.dot(v);
    if (!(std::abs(rv) > 1e-300)) return -1;
    alpha = rho1 / rv;
    s = r - alpha * v;
    if (s.lpNorm<Eigen::Infinity>() <= target) {
      x += alpha * phat;
      return it;
    }
    shat = precond.solve(s);
    t.noalias() = a * shat;
    const double tt = t.squaredNorm();
    if (!(tt > 1e-300)) return -1;
    omega = t.dot(s) / tt;
    x += alpha * phat + omega * shat;
    r = s - omega * t;
    if (r.lpNorm<Eigen::Infinity>() <= target) return it;
    if (!(std::abs(omega) > 1e-300)) return -1;
    rho = rho1;
  }
  return -1;
}

}  // namespace detail

/// Reusable linear-solve state for a fixed mesh/config Newton sequence.
/// Caches the Jacobian sparsity pattern (state-independent by assembly)
/// and the symbolic analysis. Small systems refactorize exactly on every
/// call; large systems keep a frozen numeric factorization as the
/// BiCGSTAB preconditioner and refactorize when the Krylov iteration
/// count shows it has gone stale.
class NewtonWorkspace {
 public:
  Eigen::VectorXd solve(const SparseTriplets& J, const Eigen::VectorXd& rhs,
                        const NewtonOptions& opts) {
    load(J, opts);
    if (!frozen_mode_) {
      factorize();
      return lu_->solve(rhs);
    }
    // inexact-Newton forcing: relative drop with a floor well below the
    // nonlinear tolerance, so the final iteration can still undershoot it
    const double target =
        std::max(1e-6 * rhs.lpNorm<Eigen::Infinity>(), 0.02 * opts.abs_tol);
    return solve_frozen(rhs, target);
  }

 private:
  using ColMat = Eigen::SparseMatrix<double>;

  bool pattern_ready_ = false;
  bool frozen_mode_ = false;
  std::size_t pattern_triplets_ = 0;

  ColMat a_col_;
  std::vector<Eigen::Index> slot_;
  std::unique_ptr<Eigen::UmfPackLU<ColMat>> lu_;
  bool factor_fresh_ = false;  ///< factors match the current values
  bool refactor_ = true;

  static std::vector<Eigen::Index> build_slots(const ColMat& a, const SparseTriplets& t) {
    std::vector<Eigen::Index> slot(t.size());
    const auto* outer = a.outerIndexPtr();
    const auto* inner = a.innerIndexPtr();
    for (std::size_t i = 0; i < t.size(); ++i) {
      const auto* begin = inner + outer[t.col[i]];
      const auto* end = inner + outer[t.col[i] + 1];
      const auto* pos = std::lower_bound(begin, end, t.row[i]);
      slot[i] = pos - inner;
    }
    return slot;
  }

  void load(const SparseTriplets& J, const NewtonOptions& opts) {
    if (!pattern_ready_ || pattern_triplets_ != J.size()) {
      frozen_mode_ =
          opts.linear == NewtonOptions::Linear::Iterative ||
          (opts.linear == NewtonOptions::Linear::Auto && J.rows > opts.iterative_threshold);
      a_col_ = detail::to_eigen(J);
      slot_ = build_slots(a_col_, J);
      lu_ = std::make_unique<Eigen::UmfPackLU<ColMat>>();
      lu_->umfpackControl()[UMFPACK_IRSTEP] = 0;  // refinement is ours
      lu_->analyzePattern(a_col_);
      pattern_ready_ = true;
      pattern_triplets_ = J.size();
      refactor_ = true;
    } else {
      double* val = a_col_.valuePtr();
      std::fill(val, val + a_col_.nonZeros(), 0.0);
      for (std::size_t i = 0; i < J.size(); ++i) val[slot_[i]] += J.val[i];
    }
    factor_fresh_ = false;
  }

  void factorize() {
    lu_->factorize(a_col_);
    if (lu_->info() != Eigen::Success)
      throw SolverError("newton: jacobian factorization failed");
    factor_fresh_ = true;
    refactor_ = false;
  }

  Eigen::VectorXd solve_frozen(const Eigen::VectorXd& rhs, double target) {
    if (refactor_) factorize();
    Eigen::VectorXd x;
    for (int attempt = 0; attempt < 2; ++attempt) {
      const int iters = detail::bicgstab(a_col_, rhs, x, *lu_, target, 40);
      if (iters >= 0) {
        refactor_ = iters > 2;  // going stale; the refactorization is cheap
        return x;
      }
      if (factor_fresh_) break;  // stagnation even with current factors
      factorize();
    }
    // last resort: the fresh factorization applied directly, polished by
    // iterative refinement
    if (!factor_fresh_) factorize();
    x = lu_->solve(rhs);
    for (int pass = 0; pass < 4; ++pass) {
      Eigen::VectorXd r = rhs - a_col_ * x;
      if (r.lpNorm<Eigen::Infinity>() <= target) return x;
      x += lu_->solve(r);
    }
    if ((rhs - a_col_ * x).lpNorm<Eigen::Infinity>() <= target) return x;
    throw SolverError("newton: frozen-factor solve failed to reach the forcing tolerance");
  }
};

namespace detail {

/// Newton linear subproblem; the workspace (when provided) reuses
/// symbolic work across iterations and steps.
inline Eigen::VectorXd newton_linear_solve(const SparseTriplets& J, const Eigen::VectorXd& rhs,
                                           const NewtonOptions& opts, NewtonWorkspace* ws) {
  if (ws) return ws->solve(J, rhs, opts);
  const bool iterative =
      opts.linear == NewtonOptions::Linear::Iterative ||
      (opts.linear == NewtonOptions::Linear::Auto && J.rows > opts.iterative_threshold);
  if (iterative) {
    NewtonWorkspace local;
    return local.solve(J, rhs, opts);
  }
  Eigen::SparseMatrix<double> A = to_eigen(J);
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu(A);
  if (lu.info() != Eigen::Success)
    throw SolverError("newton: jacobian factorization failed (" + lu.lastErrorMessage() + ")");
  return lu.solve(rhs);
}

inline Eigen::VectorXd flatten_residual(const Residual& r, int n, int ncells) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(ncells) * (n + 1));
  for (int k = 0; k < ncells; ++k) {
    for (int i = 0; i < n; ++i) out[unknown_index(k, i, n)] = r.species[i][k];
    out[phi_index(k, n)] = r.poisson[k];
  }
  return out;
}

inline void apply_update(State& s, const Eigen::VectorXd& delta, double alpha, int n,
                         bool project) {
  for (int k = 0; k < s.cell_count(); ++k) {
    for (int i = 0; i < n; ++i) {
      double v = s.u[i][k] + alpha * delta[unknown_index(k, i, n)];
      if (project) v = std::clamp(v, 0.0, 1.0);
      s.u[i][k] = v;
    }
    s.phi[k] += alpha * delta[phi_index(k, n)];
  }
}

}  // namespace detail

struct NewtonStepResult {
  State state;
  double residual_norm = 0.0;  ///< after the step
  double step_scale = 1.0;     ///< accepted damping factor
};

/// One damped Newton step on the coupled implicit-Euler system: solves
/// J delta = -R and backtracks on the residual infinity norm.
inline NewtonStepResult newton_step(const State& guess, const State& state_old, double dt,
                                    const Mesh& mesh, const ModelConfig& config,
                                    const BoundaryData& bc, const NewtonOptions& opts = {},
                                    NewtonWorkspace* ws = nullptr) {
  const int n = config.species_count();
  Eigen::VectorXd r = detail::flatten_residual(
      coupled_residual(guess, state_old, dt, mesh, config, bc), n, mesh.cell_count());
  const double norm0 = r.lpNorm<Eigen::Infinity>();
  if (norm0 <= opts.abs_tol) return {guess, norm0, 0.0};

  SparseTriplets J = assemble_jacobian(guess, dt, mesh, config, bc);
  Eigen::VectorXd delta = detail::newton_linear_solve(J, -r, opts, ws);

  double alpha = 1.0;
  while (true) {
    State trial = guess;
    detail::apply_update(trial, delta, alpha, n, opts.projection_enabled);
    const double norm = detail::flatten_residual(
                            coupled_residual(trial, state_old, dt, mesh, config, bc), n,
                            mesh.cell_count())
                            .lpNorm<Eigen::Infinity>();
    if (norm <= opts.abs_tol || norm < (1.0 - 1e-4 * alpha) * norm0)
      return {std::move(trial), norm, alpha};
    alpha *= opts.damping_factor;
    if (alpha < opts.min_step)
      throw NewtonFailure("newton: line search failed (step below minimum)", guess, norm0);
  }
}

struct StepReport {
  State state;
  int newton_iterations = 0;
  double residual_norm = 0.0;
  double clip_magnitude = 0.0;  ///< largest bound violation removed post-solve
};

/// Full Newton iteration from `guess` for the implicit step from
/// `state_old`; does not check bounds.
inline StepReport solve_implicit_step(const State& guess, const State& state_old, double dt,
                                      const Mesh& mesh, const ModelConfig& config,
                                      const BoundaryData& bc, const NewtonOptions& opts = {},
                                      NewtonWorkspace* ws = nullptr) {
  StepReport rep;
  rep.state = guess;
  for (int it = 0; it <= opts.max_iter; ++it) {
    NewtonStepResult step = newton_step(rep.state, state_old, dt, mesh, config, bc, opts, ws);
    rep.residual_norm = step.residual_norm;
    if (step.step_scale == 0.0) {  // already converged, no update applied
      rep.state = std::move(step.state);
      return rep;
    }
    rep.state = std::move(step.state);
    ++rep.newton_iterations;
    if (rep.residual_norm <= opts.abs_tol) return rep;
  }
  throw NewtonFailure("newton: no convergence within max_iter", rep.state, rep.residual_norm);
}

/// Tolerance separating roundoff-level bound violations (clipped) from
/// scheme defects (errors): the scheme preserves the bounds exactly.
inline constexpr double bounds_tolerance = 1e-9;

/// Advances one implicit Euler step from state_old. The result satisfies
/// u_i >= 0 (and u_0 >= 0 under equal diffusion) up to the solver
/// tolerance, then is clipped exactly; larger violations are structural
/// errors.
inline StepReport advance_time_step(const State& state_old, double dt, const Mesh& mesh,
                                    const ModelConfig& config, const BoundaryData& bc,
                                    const NewtonOptions& opts = {},
                                    NewtonWorkspace* ws = nullptr) {
  StepReport rep = solve_implicit_step(state_old, state_old, dt, mesh, config, bc, opts, ws);
  State& s = rep.state;
  const int n = config.species_count();

  double worst = 0.0;
  for (int i = 0; i < n; ++i)
    for (double v : s.u[i]) worst = std::min(worst, v);
  if (worst < -bounds_tolerance)
    throw StructureError("advance_time_step: concentration bound violated by " +
                         std::to_string(-worst));
  rep.clip_magnitude = -worst;
  for (int i = 0; i < n; ++i)
    for (double& v : s.u[i]) v = std::max(v, 0.0);

  if (config.equal_diffusion()) {
    const auto u0 = solvent_concentration(s, config);
    double worst0 = 0.0;
    for (double v : u0) worst0 = std::min(worst0, v);
    if (worst0 < -bounds_tolerance)
      throw StructureError("advance_time_step: solvent bound violated by " +
                           std::to_string(-worst0));
    if (worst0 < 0.0) {
      rep.clip_magnitude = std::max(rep.clip_magnitude, -worst0);
      for (int k = 0; k < s.cell_count(); ++k) {
        if (u0[k] >= 0.0) continue;
        double sum = 0.0;
        for (int i = 0; i < n; ++i) sum += s.u[i][k];
        const double target = 1.0 - config.immobile_at(k);
        if (sum > 0.0)
          for (int i = 0; i < n; ++i) s.u[i][k] *= target / sum;
      }
    }
  }

  s.step = state_old.step + 1;
  s.time = state_old.time + dt;
  return rep;
}

enum class StopReason { Steady, TimeEnd, MaxSteps };

struct RunResult {
  State final_state;
  long steps = 0;
  StopReason reason = StopReason::MaxSteps;
};

/// Per-step observer: old state, step report, and the consecutive-state
/// discrete L2 difference used by the steady-state criterion.
using StepCallback = std::function<void(const State&, const StepReport&, double)>;

/// Discrete L2 distance between consecutive time levels over all species.
inline double consecutive_difference(const State& a, const State& b, const Mesh& mesh) {
  double acc = 0.0;
  for (int i = 0; i < a.species_count(); ++i)
    for (int k = 0; k < mesh.cell_count(); ++k) {
      const double d = a.u[i][k] - b.u[i][k];
      acc += mesh.cells[k].measure * d * d;
    }
  return std::sqrt(acc);
}

/// Implicit Euler time loop until steady state, t_end, or max_steps.
inline RunResult run(const State& initial, const Mesh& mesh, const ModelConfig& config,
                     const BoundaryData& bc, const TimeLoopOptions& time_opts = {},
                     const NewtonOptions& newton_opts = {}, const StepCallback& callback = {}) {
  RunResult out;
  out.final_state = initial;
  State prev = initial;
  NewtonWorkspace workspace;
  while (out.steps < time_opts.max_steps &&
         prev.time < time_opts.t_end - 0.5 * time_opts.dt) {
    StepReport rep;
    try {
      rep = advance_time_step(prev, time_opts.dt, mesh, config, bc, newton_opts, &workspace);
    } catch (const NewtonFailure& e) {
      throw SolverError("step " + std::to_string(out.steps + 1) + ": " + e.what());
    }
    ++out.steps;
    const double diff = consecutive_difference(rep.state, prev, mesh);
    if (callback) callback(prev, rep, diff);
    out.final_state = rep.state;
    if (diff < time_opts.steady_tol) {
      out.reason = StopReason::Steady;
      return out;
    }
    prev = std::move(rep.state);
  }
  out.reason = prev.time >= time_opts.t_end - 0.5 * time_opts.dt ? StopReason::TimeEnd
                                                                 : StopReason::MaxSteps;
  return out;
}

/// Solves the Poisson block alone for given concentrations (used for the
/// initial potential). Gauge-fixed to zero mean under pure Neumann.
inline std::vector<double> solve_poisson(const Mesh& mesh, const ModelConfig& config,
                                         const BoundaryData& bc,
                                         const std::vector<std::vector<double>>& u) {
  const int nc = mesh.cell_count();
  SparseTriplets A(nc, nc);
  std::vector<double> rhs(nc, 0.0);
  const bool gauge = poisson_gauge_fixed(mesh);
  for (int k = 0; k < nc; ++k) {
    if (gauge && k == 0) continue;
    double diag = 0.0;
    for (int ei : mesh.cells[k].edges) {
      const Edge& e = mesh.edges[ei];
      if (e.kind == EdgeKind::Neumann) continue;
      diag += config.lambda2 * e.tau;
      if (e.interior())
        A.add(k, mesh.neighbor(e, k), -config.lambda2 * e.tau);
      else
        rhs[k] += config.lambda2 * e.tau * bc.potential[e.dirichlet_index];
    }
    A.add(k, k, diag);
    double charge = config.permanent_charge(k);
    for (int i = 0; i < config.species_count(); ++i) charge += config.species[i].charge * u[i][k];
    rhs[k] += mesh.cells[k].measure * charge;
  }
  if (gauge) {
    for (int k = 0; k < nc; ++k) A.add(0, k, mesh.cells[k].measure / mesh.total_measure);
    rhs[0] = 0.0;
  }
  return solve_linear(A, rhs);
}

/// Initial state: cell means of the descriptors plus one Poisson solve for
/// the initial potential.
inline State initial_state(const Mesh& mesh, const ModelConfig& config, const BoundaryData& bc,
                           const std::vector<InitialDescriptor>& init) {
  State s = initial_concentrations(mesh, config, init);
  s.phi = solve_poisson(mesh, config, bc, s.u);
  return s;
}

}  // namespace crossflux
