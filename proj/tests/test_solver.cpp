#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "crossflux/solver.hpp"

using namespace crossflux;

namespace {

ModelConfig config_n(std::vector<double> charges, double beta = 1.0, bool drift = true) {
  ModelConfig c;
  for (std::size_t i = 0; i < charges.size(); ++i)
    c.species.push_back({"s" + std::to_string(i), 1.0, charges[i]});
  c.beta = beta;
  c.lambda2 = 1.0;
  c.drift_enabled = drift;
  return c;
}

BoundaryData empty_bc(const Mesh& mesh, int n_species) {
  BoundaryData bc;
  bc.concentration.assign(n_species, std::vector<double>(mesh.dirichlet_count(), 0.0));
  bc.potential.assign(mesh.dirichlet_count(), 0.0);
  return bc;
}

Mesh two_cell_mesh(bool dirichlet_ends = false) {
  SideMarkers mk;
  if (dirichlet_ends) {
    mk.left = EdgeKind::Dirichlet;
    mk.right = EdgeKind::Dirichlet;
  }
  return build_structured_mesh(2, 1, Rect{0, 0, 2, 1}, mk);
}

/// Dense Gaussian elimination with partial pivoting, independent of the
/// sparse solver under test.
std::vector<double> dense_solve(std::vector<std::vector<double>> a, std::vector<double> b) {
  const int n = static_cast<int>(b.size());
  for (int col = 0; col < n; ++col) {
    int piv = col;
    for (int r = col + 1; r < n; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    std::swap(a[col], a[piv]);
    std::swap(b[col], b[piv]);
    for (int r = col + 1; r < n; ++r) {
      const double f = a[r][col] / a[col][col];
      for (int c = col; c < n; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n);
  for (int r = n - 1; r >= 0; --r) {
    double s = b[r];
    for (int c = r + 1; c < n; ++c) s -= a[r][c] * x[c];
    x[r] = s / a[r][r];
  }
  return x;
}

double mass(const State& s, const Mesh& mesh, int i) {
  double m = 0.0;
  for (int k = 0; k < mesh.cell_count(); ++k) m += mesh.cells[k].measure * s.u[i][k];
  return m;
}

}  // namespace

TEST_CASE("solve_linear") {
  SECTION("identity") {
    SparseTriplets id(3, 3);
    for (int i = 0; i < 3; ++i) id.add(i, i, 1.0);
    auto x = solve_linear(id, {1.0, -2.0, 3.5});
    CHECK(x[0] == 1.0);
    CHECK(x[1] == -2.0);
    CHECK(x[2] == 3.5);
  }

  SECTION("two-cell poisson block against the hand solve") {
    // Unit cells on [0,2]x[0,1], Dirichlet ends with phi = 0 at x=0 and
    // phi = 3 at x=2, zero charge. By hand: 3 phi0 - phi1 = 0 and
    // 3 phi1 - phi0 = 6, so phi = (0.75, 2.25) (the linear profile 1.5 x).
    Mesh mesh = two_cell_mesh(true);
    auto cfg = config_n({0.0});
    BoundaryData bc = empty_bc(mesh, 1);
    for (int d = 0; d < mesh.dirichlet_count(); ++d) {
      const Edge& e = mesh.edges[mesh.dirichlet_edges[d]];
      bc.potential[d] = 1.5 * (mesh.vertices[e.a].x + mesh.vertices[e.b].x) * 0.5;
    }
    std::vector<std::vector<double>> u{{std::vector<double>(2, 0.3)}};
    auto phi = solve_poisson(mesh, cfg, bc, u);
    CHECK(phi[0] == Catch::Approx(0.75));
    CHECK(phi[1] == Catch::Approx(2.25));
  }

  SECTION("random SPD system matches the dense oracle") {
    std::mt19937_64 rng(71);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    const int n = 50;
    std::vector<std::vector<double>> dense(n, std::vector<double>(n, 0.0));
    SparseTriplets sp(n, n);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c <= r; ++c) {
        double v = dist(rng);
        if (r == c) v = std::abs(v) + n;  // diagonally dominant, SPD
        dense[r][c] = v;
        dense[c][r] = v;
        sp.add(r, c, v);
        if (r != c) sp.add(c, r, v);
      }
    std::vector<double> b(n);
    for (auto& v : b) v = dist(rng);
    auto x = solve_linear(sp, b);
    auto y = dense_solve(dense, b);
    for (int i = 0; i < n; ++i) CHECK(x[i] == Catch::Approx(y[i]).margin(1e-10));
  }

  SECTION("singular matrix fails loudly") {
    SparseTriplets s(2, 2);
    s.add(0, 0, 1.0);
    s.add(0, 1, 1.0);
    s.add(1, 0, 1.0);
    s.add(1, 1, 1.0);
    CHECK_THROWS_AS(solve_linear(s, {1.0, 2.0}), SolverError);
  }
}

TEST_CASE("newton step") {
  SECTION("fixed point at the exact solution") {
    Mesh mesh = build_structured_mesh(3, 3);
    auto cfg = config_n({1.0, -1.0});
    auto bc = empty_bc(mesh, 2);
    State s = make_state(mesh, 2);
    for (auto& v : s.u[0]) v = 0.2;
    for (auto& v : s.u[1]) v = 0.2;
    auto res = newton_step(s, s, 1e-3, mesh, cfg, bc);
    CHECK(res.step_scale == 0.0);
    CHECK(res.residual_norm <= NewtonOptions{}.abs_tol);
  }

  SECTION("linear poisson regime converges in one step") {
    Mesh mesh = two_cell_mesh(true);
    auto cfg = config_n({0.0});
    BoundaryData bc = empty_bc(mesh, 1);
    for (auto& v : bc.potential) v = 1.0;
    bc.concentration[0].assign(mesh.dirichlet_count(), 0.3);
    State s = make_state(mesh, 1);
    for (auto& v : s.u[0]) v = 0.3;  // uniform, matching traces: species part stationary
    s.phi = {17.0, -4.0};            // wrong potential
    auto res = newton_step(s, s, 1e-3, mesh, cfg, bc);
    CHECK(res.step_scale == 1.0);
    CHECK(res.residual_norm <= 1e-10);
  }

  SECTION("quadratic contraction on a two-cell problem") {
    Mesh mesh = two_cell_mesh();
    auto cfg = config_n({0.0}, 1.0, false);
    auto bc = empty_bc(mesh, 1);
    State old_state = make_state(mesh, 1);
    old_state.u[0] = {0.8, 0.2};
    NewtonOptions opts;
    opts.abs_tol = 1e-15;
    const double dt = 0.5;

    std::vector<double> norms;
    norms.push_back(detail::flatten_residual(
                        coupled_residual(old_state, old_state, dt, mesh, cfg, bc), 1, 2)
                        .lpNorm<Eigen::Infinity>());
    State it = old_state;
    for (int k = 0; k < 6; ++k) {
      auto res = newton_step(it, old_state, dt, mesh, cfg, bc, opts);
      it = res.state;
      norms.push_back(res.residual_norm);
      if (res.residual_norm < 1e-14) break;
    }
    REQUIRE(norms.size() >= 3);
    // successive digit-doubling while above roundoff
    for (std::size_t k = 1; k + 1 < norms.size(); ++k) {
      if (norms[k + 1] < 1e-14 || norms[k] >= 1.0) continue;
      CHECK(std::log(norms[k + 1]) / std::log(norms[k]) >= 1.8);
    }
    CHECK(norms.back() <= 1e-10);
  }
}

TEST_CASE("advance_time_step") {
  SECTION("uniform equilibrium is stationary") {
    Mesh mesh = build_structured_mesh(3, 3);
    auto cfg = config_n({1.0, -1.0});
    auto bc = empty_bc(mesh, 2);
    State s = make_state(mesh, 2);
    for (auto& v : s.u[0]) v = 0.15;
    for (auto& v : s.u[1]) v = 0.15;
    auto rep = advance_time_step(s, 1e-3, mesh, cfg, bc);
    for (int k = 0; k < mesh.cell_count(); ++k) {
      CHECK(rep.state.u[0][k] == Catch::Approx(0.15).margin(1e-10));
      CHECK(rep.state.u[1][k] == Catch::Approx(0.15).margin(1e-10));
    }
    CHECK(rep.state.step == 1);
    CHECK(rep.state.time == Catch::Approx(1e-3));
  }

  SECTION("no-flux boundaries conserve mass") {
    Mesh mesh = build_structured_mesh(5, 4);
    auto cfg = config_n({1.0, -1.0}, 0.7);
    auto bc = empty_bc(mesh, 2);
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> dist(0.05, 0.35);
    State s = make_state(mesh, 2);
    for (int k = 0; k < mesh.cell_count(); ++k) {
      s.u[0][k] = dist(rng);
      s.u[1][k] = dist(rng);
    }
    s.phi = solve_poisson(mesh, cfg, bc, s.u);
    const double m0 = mass(s, mesh, 0), m1 = mass(s, mesh, 1);
    NewtonOptions opts;
    opts.abs_tol = 1e-12;
    for (int step = 0; step < 50; ++step) s = advance_time_step(s, 1e-3, mesh, cfg, bc, opts).state;
    CHECK(mass(s, mesh, 0) == Catch::Approx(m0).epsilon(1e-10));
    CHECK(mass(s, mesh, 1) == Catch::Approx(m1).epsilon(1e-10));
  }

  SECTION("two cells approach the mean monotonically") {
    Mesh mesh = two_cell_mesh();
    auto cfg = config_n({0.0}, 1.0, false);
    auto bc = empty_bc(mesh, 1);
    State s = make_state(mesh, 1);
    s.u[0] = {0.8, 0.2};
    const double total = mass(s, mesh, 0);
    double hi = 0.8, lo = 0.2;
    for (int step = 0; step < 60; ++step) {
      s = advance_time_step(s, 0.1, mesh, cfg, bc).state;
      CHECK(mass(s, mesh, 0) == Catch::Approx(total).epsilon(1e-10));
      CHECK(s.u[0][0] <= hi + 1e-12);
      CHECK(s.u[0][1] >= lo - 1e-12);
      CHECK(s.u[0][0] >= 0.5 - 1e-12);
      CHECK(s.u[0][1] <= 0.5 + 1e-12);
      hi = s.u[0][0];
      lo = s.u[0][1];
    }
    CHECK(hi == Catch::Approx(0.5).margin(1e-3));
  }
}

TEST_CASE("time loop") {
  SECTION("steady initial state stops at the first step") {
    Mesh mesh = build_structured_mesh(3, 2);
    auto cfg = config_n({1.0, -1.0});
    auto bc = empty_bc(mesh, 2);
    State s = make_state(mesh, 2);
    for (auto& v : s.u[0]) v = 0.1;
    for (auto& v : s.u[1]) v = 0.1;
    auto result = run(s, mesh, cfg, bc);
    CHECK(result.reason == StopReason::Steady);
    CHECK(result.steps == 1);
  }

  SECTION("steady state is independent of the time step") {
    SideMarkers mk{EdgeKind::Dirichlet, EdgeKind::Dirichlet, EdgeKind::Neumann,
                   EdgeKind::Neumann};
    Mesh mesh = build_structured_mesh(4, 1, Rect{0, 0, 1, 0.25}, mk);
    auto cfg = config_n({0.0}, 1.0, false);
    BoundaryData bc = empty_bc(mesh, 1);
    for (int d = 0; d < mesh.dirichlet_count(); ++d) {
      const Edge& e = mesh.edges[mesh.dirichlet_edges[d]];
      const double x = 0.5 * (mesh.vertices[e.a].x + mesh.vertices[e.b].x);
      bc.concentration[0][d] = x < 0.5 ? 0.2 : 0.4;
    }
    std::vector<InitialDescriptor> init(1);
    init[0].value = 0.3;
    State s0 = initial_state(mesh, cfg, bc, init);

    TimeLoopOptions t1, t2;
    t1.dt = 0.02;
    t2.dt = 0.01;
    auto r1 = run(s0, mesh, cfg, bc, t1);
    auto r2 = run(s0, mesh, cfg, bc, t2);
    CHECK(r1.reason == StopReason::Steady);
    CHECK(r2.reason == StopReason::Steady);
    CHECK(consecutive_difference(r1.final_state, r2.final_state, mesh) <= 1e-9);
  }

  SECTION("trajectories are deterministic") {
    Mesh mesh = build_structured_mesh(4, 3);
    auto cfg = config_n({1.0, -1.0}, 1.2);
    auto bc = empty_bc(mesh, 2);
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> dist(0.05, 0.3);
    State s = make_state(mesh, 2);
    for (int k = 0; k < mesh.cell_count(); ++k) {
      s.u[0][k] = dist(rng);
      s.u[1][k] = dist(rng);
    }
    s.phi = solve_poisson(mesh, cfg, bc, s.u);
    TimeLoopOptions topts;
    topts.max_steps = 25;
    auto r1 = run(s, mesh, cfg, bc, topts);
    auto r2 = run(s, mesh, cfg, bc, topts);
    REQUIRE(r1.steps == r2.steps);
    for (int i = 0; i < 2; ++i)
      for (int k = 0; k < mesh.cell_count(); ++k)
        CHECK(r1.final_state.u[i][k] == r2.final_state.u[i][k]);
    for (int k = 0; k < mesh.cell_count(); ++k)
      CHECK(r1.final_state.phi[k] == r2.final_state.phi[k]);
  }
}

TEST_CASE("initial state solves the poisson equation") {
  Mesh mesh = two_cell_mesh(true);
  auto cfg = config_n({0.0});
  BoundaryData bc = empty_bc(mesh, 1);
  for (int d = 0; d < mesh.dirichlet_count(); ++d) {
    const Edge& e = mesh.edges[mesh.dirichlet_edges[d]];
    bc.potential[d] = 1.5 * (mesh.vertices[e.a].x + mesh.vertices[e.b].x) * 0.5;
    bc.concentration[0][d] = 0.3;
  }
  std::vector<InitialDescriptor> init(1);
  init[0].value = 0.3;
  State s = initial_state(mesh, cfg, bc, init);
  CHECK(s.phi[0] == Catch::Approx(0.75));
  CHECK(s.phi[1] == Catch::Approx(2.25));
}

TEST_CASE("perturbed newton guesses reach the same step solution") {
  // Uniqueness probe under pure Neumann, equal diffusion, no drift.
  Mesh mesh = build_structured_mesh(3, 3);
  auto cfg = config_n({1.0, -1.0}, 1.0, false);
  auto bc = empty_bc(mesh, 2);
  std::mt19937_64 rng(131);
  std::uniform_real_distribution<double> dist(0.1, 0.3);
  std::uniform_real_distribution<double> noise(-1e-3, 1e-3);
  State s = make_state(mesh, 2);
  for (int k = 0; k < mesh.cell_count(); ++k) {
    s.u[0][k] = dist(rng);
    s.u[1][k] = dist(rng);
  }
  NewtonOptions opts;
  opts.projection_enabled = true;
  for (int step = 0; step < 5; ++step) {
    State guess = s;
    for (int k = 0; k < mesh.cell_count(); ++k)
      for (int i = 0; i < 2; ++i)
        guess.u[i][k] = std::clamp(guess.u[i][k] + noise(rng), 0.0, 1.0);
    auto direct = solve_implicit_step(s, s, 1e-2, mesh, cfg, bc, opts);
    auto perturbed = solve_implicit_step(guess, s, 1e-2, mesh, cfg, bc, opts);
    CHECK(consecutive_difference(direct.state, perturbed.state, mesh) <= 1e-8);
    s = direct.state;
    s.step++;
  }
}
