#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <sstream>

#include "crossflux/mesh.hpp"

using namespace crossflux;

namespace {

Mesh two_cell_mesh() {
  // Two unit squares sharing one vertical edge; left/right Dirichlet.
  SideMarkers mk;
  mk.left = EdgeKind::Dirichlet;
  mk.right = EdgeKind::Dirichlet;
  return build_structured_mesh(2, 1, Rect{0, 0, 2, 1}, mk);
}

// Triangle pair sharing the horizontal edge (0,0)-(1,0); both acute and
// scalene so that centroids break the center-segment orthogonality.
Mesh triangle_pair(bool use_circumcenters) {
  std::vector<Vec2> verts = {{0, 0}, {1, 0}, {0.3, 0.9}, {0.6, -0.7}};
  std::vector<std::vector<int>> cells = {{0, 1, 2}, {1, 0, 3}};
  std::vector<Vec2> centers(2);
  if (use_circumcenters) {
    centers[0] = circumcenter(verts[0], verts[1], verts[2]);
    centers[1] = circumcenter(verts[1], verts[0], verts[3]);
  } else {
    centers[0] = (verts[0] + verts[1] + verts[2]) / 3.0;
    centers[1] = (verts[1] + verts[0] + verts[3]) / 3.0;
  }
  std::vector<std::tuple<int, int, EdgeKind>> bnd = {
      {0, 2, EdgeKind::Neumann}, {1, 2, EdgeKind::Neumann},
      {0, 3, EdgeKind::Neumann}, {1, 3, EdgeKind::Neumann}};
  return finalize_mesh(verts, cells, centers, bnd);
}

int interior_edge(const Mesh& m) {
  for (int e = 0; e < m.edge_count(); ++e)
    if (m.edges[e].interior()) return e;
  return -1;
}

}  // namespace

TEST_CASE("structured mesh: two unit cells") {
  Mesh m = two_cell_mesh();
  REQUIRE(m.cell_count() == 2);
  int ninterior = 0;
  for (const Edge& e : m.edges) ninterior += e.interior() ? 1 : 0;
  REQUIRE(ninterior == 1);
  const Edge& e = m.edges[interior_edge(m)];
  CHECK(e.measure == Catch::Approx(1.0));
  CHECK(e.distance == Catch::Approx(1.0));
  CHECK(e.tau == Catch::Approx(1.0));
  CHECK(m.total_measure == Catch::Approx(2.0));
}

TEST_CASE("structured mesh: single cell has no interior edges") {
  Mesh m = build_structured_mesh(1, 1);
  REQUIRE(m.cell_count() == 1);
  REQUIRE(m.edge_count() == 4);
  for (const Edge& e : m.edges) CHECK_FALSE(e.interior());
}

TEST_CASE("structured mesh: 2x2 on unit square") {
  Mesh m = build_structured_mesh(2, 2);
  REQUIRE(m.cell_count() == 4);
  for (const Edge& e : m.edges) {
    if (!e.interior()) continue;
    CHECK(e.measure == Catch::Approx(0.5));
    CHECK(e.distance == Catch::Approx(0.5));
    CHECK(e.tau == Catch::Approx(1.0));
  }
}

TEST_CASE("structured mesh rejects bad input") {
  CHECK_THROWS_AS(build_structured_mesh(0, 3), MeshError);
  CHECK_THROWS_AS(build_structured_mesh(2, 2, Rect{0, 0, 0, 1}), MeshError);
}

TEST_CASE("mesh save/load round trip") {
  Mesh m = two_cell_mesh();
  std::stringstream ss;
  save_mesh(m, ss);
  Mesh r = load_mesh(ss);
  REQUIRE(r.cell_count() == m.cell_count());
  REQUIRE(r.edge_count() == m.edge_count());
  REQUIRE(r.dirichlet_count() == m.dirichlet_count());
  for (int k = 0; k < m.cell_count(); ++k) {
    CHECK(r.cells[k].center == m.cells[k].center);
    CHECK(r.cells[k].measure == m.cells[k].measure);
    CHECK(r.cells[k].vertices == m.cells[k].vertices);
  }
  for (int e = 0; e < m.edge_count(); ++e) {
    CHECK(r.edges[e].kind == m.edges[e].kind);
    CHECK(r.edges[e].tau == m.edges[e].tau);
  }
}

TEST_CASE("load accepts circumcenter pair, rejects centroid pair") {
  Mesh good = triangle_pair(true);
  std::stringstream ss;
  save_mesh(good, ss);
  CHECK_NOTHROW(load_mesh(ss));

  Mesh bad = triangle_pair(false);  // finalize alone does not validate orthogonality
  std::stringstream ss2;
  save_mesh(bad, ss2);
  CHECK_THROWS_AS(load_mesh(ss2), MeshError);
}

TEST_CASE("check_admissibility") {
  SECTION("uniform rectangles: zeta = 1/2") {
    Mesh m = build_structured_mesh(4, 3);
    auto rep = check_admissibility(m);
    CHECK(rep.pass);
    CHECK(rep.zeta == Catch::Approx(0.5));
    CHECK(rep.max_orthogonality_defect <= 1e-14);
  }
  SECTION("single cell: zeta from boundary edges only") {
    Mesh m = build_structured_mesh(1, 1);
    auto rep = check_admissibility(m);
    CHECK(rep.pass);
    CHECK(rep.zeta == Catch::Approx(1.0));
  }
  SECTION("perturbed center breaks orthogonality") {
    Mesh m = two_cell_mesh();
    const double angle = 1e-3;
    // Rotate the center offset so the joining segment tilts by ~1e-3 rad.
    m.cells[1].center.y += std::tan(angle) * 1.0;
    auto rep = check_admissibility(m, 1e-10);
    CHECK_FALSE(rep.pass);
    CHECK(rep.max_orthogonality_defect == Catch::Approx(std::sin(angle)).epsilon(1e-3));
    CHECK(rep.worst_edge == interior_edge(m));
  }
}

TEST_CASE("diff against edge kinds") {
  Mesh m = two_cell_mesh();
  CellField f({0.2, 0.5});
  const int ie = interior_edge(m);

  SECTION("interior") {
    CHECK(diff(m, f, ie) == Catch::Approx(0.3));
    CHECK(diff(m, f, ie, m.edges[ie].cell_l) == Catch::Approx(-0.3));
  }
  SECTION("neumann is zero") {
    for (int e = 0; e < m.edge_count(); ++e)
      if (m.edges[e].kind == EdgeKind::Neumann) CHECK(diff(m, f, e) == 0.0);
  }
  SECTION("dirichlet uses the trace") {
    f.dirichlet.assign(m.dirichlet_count(), 1.0);
    const int de = m.dirichlet_edges[0];
    const int k = m.edges[de].cell_k;
    CHECK(diff(m, f, de, k) == Catch::Approx(1.0 - f.values[k]));
  }
  SECTION("missing dirichlet trace is a contract violation") {
    CHECK_THROWS_AS(diff(m, f, m.dirichlet_edges[0]), DomainError);
  }
}

TEST_CASE("discrete H1 norm") {
  Mesh m = two_cell_mesh();
  CHECK(discrete_h1_norm(m, CellField({0.0, 0.0})) == 0.0);
  CHECK(discrete_h1_norm(m, CellField({0.0, 1.0})) == Catch::Approx(std::sqrt(2.0)));
  const double c = -0.7;
  CHECK(discrete_h1_norm(m, CellField({c, c})) ==
        Catch::Approx(std::sqrt(m.total_measure) * std::abs(c)));
}

TEST_CASE("discrete H-1 norm") {
  Mesh m = two_cell_mesh();

  SECTION("zero field") {
    CHECK(discrete_hminus1_norm(m, CellField({0.0, 0.0})) == 0.0);
  }

  SECTION("duality inequality on random fields") {
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    Mesh big = build_structured_mesh(5, 4);
    for (int rep = 0; rep < 20; ++rep) {
      std::vector<double> v(big.cell_count()), w(big.cell_count());
      for (auto& x : v) x = dist(rng);
      for (auto& x : w) x = dist(rng);
      double pairing = 0.0;
      for (int k = 0; k < big.cell_count(); ++k)
        pairing += big.cells[k].measure * v[k] * w[k];
      const double bound =
          discrete_hminus1_norm(big, CellField(v)) * discrete_h1_norm(big, CellField(w));
      CHECK(std::abs(pairing) <= bound * (1.0 + 1e-12));
    }
  }

  SECTION("matches brute-force dual maximization on 2 dof") {
    CellField v({1.0, -1.0});
    // sup over w of integral(v*w) with ||w||_{1,T}=1, scanned by direction.
    double best = 0.0;
    const int samples = 200000;
    for (int s = 0; s < samples; ++s) {
      const double theta = 2.0 * M_PI * s / samples;
      CellField w({std::cos(theta), std::sin(theta)});
      const double nw = discrete_h1_norm(m, w);
      double pairing = 0.0;
      for (int k = 0; k < 2; ++k) pairing += m.cells[k].measure * v.values[k] * w.values[k];
      best = std::max(best, std::abs(pairing) / nw);
    }
    CHECK(discrete_hminus1_norm(m, v) == Catch::Approx(best).epsilon(1e-8));
  }
}

TEST_CASE("discrete gradient on the dual mesh") {
  Mesh m = two_cell_mesh();
  const int ie = interior_edge(m);

  SECTION("constant field has zero gradient") {
    auto g = discrete_gradient(m, CellField({0.4, 0.4}));
    for (const Vec2& v : g) CHECK(norm(v) == 0.0);
  }

  SECTION("two-cell jump: magnitude 2 along n_KL") {
    auto g = discrete_gradient(m, CellField({0.0, 1.0}));
    CHECK(m.edges[ie].diamond == Catch::Approx(0.5));
    CHECK(norm(g[ie]) == Catch::Approx(2.0));
    CHECK(dot(g[ie], m.edges[ie].normal) == Catch::Approx(2.0));
    for (int e = 0; e < m.edge_count(); ++e)
      if (!m.edges[e].interior()) CHECK(norm(g[e]) == 0.0);
  }

  SECTION("linear fields: exact normal component, 2D diamond factor") {
    // On T_KL the diamond gradient of v(x) = a.x is 2 (a.n) n: the diamond
    // is orthodiagonal, so m(T_KL) = m(sigma) d_sigma / 2 exactly.
    Mesh grid = build_structured_mesh(6, 5, Rect{0, 0, 1.2, 1.0});
    const Vec2 a{0.8, -1.3};
    std::vector<double> vals(grid.cell_count());
    for (int k = 0; k < grid.cell_count(); ++k) vals[k] = dot(a, grid.cells[k].center);
    auto g = discrete_gradient(grid, CellField(vals));
    for (int e = 0; e < grid.edge_count(); ++e) {
      if (!grid.edges[e].interior()) continue;
      const Vec2 n = grid.edges[e].normal;
      const Vec2 expected = n * (2.0 * dot(a, n));
      CHECK(g[e].x == Catch::Approx(expected.x).margin(1e-12));
      CHECK(g[e].y == Catch::Approx(expected.y).margin(1e-12));
    }
  }
}

TEST_CASE("mesh invariants") {
  Mesh m = build_structured_mesh(7, 4, Rect{-1, 0, 2, 1.5});

  SECTION("tau * d equals m(sigma)") {
    for (const Edge& e : m.edges) CHECK(e.tau * e.distance == Catch::Approx(e.measure).epsilon(1e-15));
  }

  SECTION("dual cells tile the domain") {
    double sum = 0.0;
    for (const Edge& e : m.edges) sum += e.diamond;
    CHECK(sum == Catch::Approx(m.total_measure).epsilon(1e-12));

    Mesh tri = triangle_pair(true);
    double tri_sum = 0.0;
    for (const Edge& e : tri.edges) tri_sum += e.diamond;
    CHECK(tri_sum == Catch::Approx(tri.total_measure).epsilon(1e-12));
  }

  SECTION("discrete integration by parts for conservative fluxes") {
    Mesh nm = build_structured_mesh(6, 6);  // pure Neumann
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> dist(-2.0, 2.0);
    std::vector<double> flux(nm.edge_count(), 0.0);
    std::vector<double> u(nm.cell_count());
    for (auto& x : u) x = dist(rng);
    for (int e = 0; e < nm.edge_count(); ++e)
      if (nm.edges[e].interior()) flux[e] = dist(rng);

    double lhs = 0.0;
    for (int k = 0; k < nm.cell_count(); ++k)
      for (int e : nm.cells[k].edges) {
        const Edge& ed = nm.edges[e];
        if (!ed.interior()) continue;
        const double fks = ed.cell_k == k ? flux[e] : -flux[e];
        lhs += fks * u[k];
      }
    double rhs = 0.0;
    for (int e = 0; e < nm.edge_count(); ++e) {
      const Edge& ed = nm.edges[e];
      if (!ed.interior()) continue;
      rhs += flux[e] * (u[ed.cell_k] - u[ed.cell_l]);
    }
    CHECK(lhs == Catch::Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("triangle refinement") {
  Mesh m = triangle_pair(true);
  RefinedMesh r = refine_triangles(m);
  REQUIRE(r.mesh.cell_count() == 4 * m.cell_count());
  REQUIRE(r.parent.size() == static_cast<std::size_t>(r.mesh.cell_count()));

  SECTION("children tile their parents") {
    std::vector<double> areas(m.cell_count(), 0.0);
    for (int k = 0; k < r.mesh.cell_count(); ++k) areas[r.parent[k]] += r.mesh.cells[k].measure;
    for (int k = 0; k < m.cell_count(); ++k)
      CHECK(areas[k] == Catch::Approx(m.cells[k].measure).epsilon(1e-12));
  }

  SECTION("refined mesh stays admissible") {
    auto rep = check_admissibility(r.mesh);
    CHECK(rep.pass);
    CHECK(rep.zeta > 0.0);
  }

  SECTION("boundary markers are inherited") {
    int nb_parent = 0, nb_child = 0;
    for (const Edge& e : m.edges) nb_parent += e.interior() ? 0 : 1;
    for (const Edge& e : r.mesh.edges) nb_child += e.interior() ? 0 : 1;
    CHECK(nb_child == 2 * nb_parent);
  }

  SECTION("rectangles are rejected") {
    CHECK_THROWS_AS(refine_triangles(build_structured_mesh(2, 2)), MeshError);
  }
}
