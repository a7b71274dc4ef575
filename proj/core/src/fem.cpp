#include "hints/fem.hpp"

#include <cmath>
#include <numbers>

#include "hints/error.hpp"

namespace hints {

namespace {

struct P1Gradients {
  std::array<double, 3> b;  // d(phi_i)/dx * 2A
  std::array<double, 3> c;  // d(phi_i)/dy * 2A
  double area;
};

P1Gradients p1_gradients(Point p0, Point p1, Point p2) {
  P1Gradients g;
  g.b = {p1.y - p2.y, p2.y - p0.y, p0.y - p1.y};
  g.c = {p2.x - p1.x, p0.x - p2.x, p1.x - p0.x};
  g.area = signed_area(p0, p1, p2);
  if (!(g.area > 0.0)) throw ConfigError("degenerate or clockwise triangle in assembly");
  return g;
}

std::array<std::array<double, 3>, 3> plane_strain_d(double e, double nu) {
  const double s = e / ((1.0 + nu) * (1.0 - 2.0 * nu));
  return {{{s * (1.0 - nu), s * nu, 0.0}, {s * nu, s * (1.0 - nu), 0.0}, {0.0, 0.0, s * (1.0 - 2.0 * nu) / 2.0}}};
}

double vertex_mean(std::span<const double> nodal, const std::array<int, 3>& tri) {
  return (nodal[tri[0]] + nodal[tri[1]] + nodal[tri[2]]) / 3.0;
}

void check_positive(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!(x > 0.0)) throw ConfigError(std::string(what) + " must be positive at every node");
  }
}

}  // namespace

std::string_view to_string(ProblemKind kind) { return kind == ProblemKind::Darcy ? "darcy" : "elasticity"; }

ProblemKind problem_from_string(std::string_view name) {
  if (name == "darcy") return ProblemKind::Darcy;
  if (name == "elasticity") return ProblemKind::Elasticity;
  throw ConfigError("unknown problem '" + std::string(name) + "'");
}

ElementMatrix3 darcy_element_matrix(Point a, Point b, Point c, double k) {
  const P1Gradients g = p1_gradients(a, b, c);
  const double scale = k / (4.0 * g.area);
  ElementMatrix3 m{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) m[i][j] = scale * (g.b[i] * g.b[j] + g.c[i] * g.c[j]);
  }
  return m;
}

CsrMatrix assemble_darcy(const TriMesh& mesh, std::span<const double> k_nodal) {
  if (k_nodal.size() != mesh.nodes.size()) throw ConfigError("assemble_darcy: k length mismatch");
  check_positive(k_nodal, "conductivity k");
  std::vector<Triplet> t;
  t.reserve(mesh.triangles.size() * 9);
  for (const auto& tri : mesh.triangles) {
    const ElementMatrix3 m =
        darcy_element_matrix(mesh.nodes[tri[0]], mesh.nodes[tri[1]], mesh.nodes[tri[2]], vertex_mean(k_nodal, tri));
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) t.push_back({tri[i], tri[j], m[i][j]});
    }
  }
  return CsrMatrix::from_triplets(mesh.node_count(), mesh.node_count(), t);
}

CsrMatrix assemble_elasticity(const TriMesh& mesh, std::span<const double> e_nodal, double nu) {
  if (e_nodal.size() != mesh.nodes.size()) throw ConfigError("assemble_elasticity: E length mismatch");
  if (!(nu > 0.0 && nu < 0.5)) throw ConfigError("Poisson's ratio must lie in (0, 0.5)");
  check_positive(e_nodal, "Young's modulus E");
  std::vector<Triplet> t;
  t.reserve(mesh.triangles.size() * 36);
  for (const auto& tri : mesh.triangles) {
    const P1Gradients g = p1_gradients(mesh.nodes[tri[0]], mesh.nodes[tri[1]], mesh.nodes[tri[2]]);
    const auto d = plane_strain_d(vertex_mean(e_nodal, tri), nu);
    // B is 3x6 with the 1/(2A) factor pulled out.
    double bm[3][6] = {};
    for (int i = 0; i < 3; ++i) {
      bm[0][2 * i] = g.b[i];
      bm[1][2 * i + 1] = g.c[i];
      bm[2][2 * i] = g.c[i];
      bm[2][2 * i + 1] = g.b[i];
    }
    double db[3][6] = {};
    for (int r = 0; r < 3; ++r) {
      for (int col = 0; col < 6; ++col) {
        for (int s = 0; s < 3; ++s) db[r][col] += d[r][s] * bm[s][col];
      }
    }
    const double scale = 1.0 / (4.0 * g.area);  // area * (1/2A)^2
    for (int i = 0; i < 6; ++i) {
      for (int j = 0; j < 6; ++j) {
        double kij = 0.0;
        for (int r = 0; r < 3; ++r) kij += bm[r][i] * db[r][j];
        t.push_back({2 * tri[i / 2] + i % 2, 2 * tri[j / 2] + j % 2, scale * kij});
      }
    }
  }
  const int n = 2 * mesh.node_count();
  return CsrMatrix::from_triplets(n, n, t);
}

Vector assemble_load(const TriMesh& mesh, std::span<const double> f_nodal, int ncomp) {
  if (f_nodal.size() != mesh.nodes.size() * ncomp) throw ConfigError("assemble_load: length mismatch");
  const Vector areas = nodal_areas(mesh);
  Vector load(f_nodal.size());
  for (std::size_t i = 0; i < load.size(); ++i) load[i] = f_nodal[i] * areas[i / ncomp];
  return load;
}

std::vector<std::array<double, 3>> element_stresses(const TriMesh& mesh, std::span<const double> e_nodal,
                                                    double nu, std::span<const double> u_full) {
  if (u_full.size() != 2 * mesh.nodes.size()) throw ConfigError("element_stresses: length mismatch");
  std::vector<std::array<double, 3>> out;
  out.reserve(mesh.triangles.size());
  for (const auto& tri : mesh.triangles) {
    const P1Gradients g = p1_gradients(mesh.nodes[tri[0]], mesh.nodes[tri[1]], mesh.nodes[tri[2]]);
    const double inv2a = 1.0 / (2.0 * g.area);
    std::array<double, 3> strain{};
    for (int i = 0; i < 3; ++i) {
      const double ux = u_full[2 * tri[i]], uy = u_full[2 * tri[i] + 1];
      strain[0] += g.b[i] * ux * inv2a;
      strain[1] += g.c[i] * uy * inv2a;
      strain[2] += (g.c[i] * ux + g.b[i] * uy) * inv2a;
    }
    const auto d = plane_strain_d(vertex_mean(e_nodal, tri), nu);
    std::array<double, 3> stress{};
    for (int r = 0; r < 3; ++r) {
      for (int s = 0; s < 3; ++s) stress[r] += d[r][s] * strain[s];
    }
    out.push_back(stress);
  }
  return out;
}

Vector AssembledSystem::scatter(std::span<const double> reduced) const {
  if (reduced.size() != free_dofs.size()) throw ConfigError("scatter: length mismatch");
  const int nc = components(kind);
  Vector full(full_size(), 0.0);
  for (std::size_t r = 0; r < free_dofs.size(); ++r) {
    full[free_dofs[r].node * nc + free_dofs[r].component] = reduced[r];
  }
  return full;
}

Vector AssembledSystem::gather(std::span<const double> full) const {
  if (full.size() != static_cast<std::size_t>(full_size())) throw ConfigError("gather: length mismatch");
  const int nc = components(kind);
  Vector reduced(free_dofs.size());
  for (std::size_t r = 0; r < free_dofs.size(); ++r) {
    reduced[r] = full[free_dofs[r].node * nc + free_dofs[r].component];
  }
  return reduced;
}

AssembledSystem apply_dirichlet(const CsrMatrix& k, std::span<const double> f,
                                std::shared_ptr<const TriMesh> mesh, ProblemKind kind) {
  const int nc = components(kind);
  const int n_full = mesh->node_count() * nc;
  if (k.rows() != n_full || k.cols() != n_full || f.size() != static_cast<std::size_t>(n_full)) {
    throw ConfigError("apply_dirichlet: system size does not match mesh");
  }
  if (mesh->dirichlet_nodes.empty()) throw ConfigError("apply_dirichlet: no Dirichlet nodes, system is singular");
  const std::vector<bool> clamped = mesh->dirichlet_flags();
  std::vector<int> reduced_index(n_full, -1);
  AssembledSystem sys;
  sys.kind = kind;
  for (int node = 0; node < mesh->node_count(); ++node) {
    if (clamped[node]) continue;
    for (int c = 0; c < nc; ++c) {
      reduced_index[node * nc + c] = static_cast<int>(sys.free_dofs.size());
      sys.free_dofs.push_back({node, c});
    }
  }
  if (sys.free_dofs.empty()) throw ConfigError("apply_dirichlet: every dof is clamped, empty system");

  std::vector<Triplet> t;
  t.reserve(k.nnz());
  for (int i = 0; i < n_full; ++i) {
    const int ri = reduced_index[i];
    if (ri < 0) continue;
    for (int p = k.row_offsets()[i]; p < k.row_offsets()[i + 1]; ++p) {
      const int rj = reduced_index[k.col_indices()[p]];
      if (rj >= 0) t.push_back({ri, rj, k.values()[p]});
    }
  }
  const int n = static_cast<int>(sys.free_dofs.size());
  sys.k = CsrMatrix::from_triplets(n, n, t);
  sys.f.resize(n);
  for (int r = 0; r < n; ++r) sys.f[r] = f[sys.free_dofs[r].node * nc + sys.free_dofs[r].component];
  sys.mesh = std::move(mesh);
  return sys;
}

AssembledSystem assemble_system(ProblemKind kind, std::shared_ptr<const TriMesh> mesh,
                                std::span<const double> coeff_nodal, std::span<const double> load_nodal,
                                const MaterialParams& material) {
  const CsrMatrix k = kind == ProblemKind::Darcy ? assemble_darcy(*mesh, coeff_nodal)
                                                 : assemble_elasticity(*mesh, coeff_nodal, material.nu);
  const Vector f = assemble_load(*mesh, load_nodal, components(kind));
  return apply_dirichlet(k, f, std::move(mesh), kind);
}

double manufactured_solution_error(int n) {
  using std::numbers::pi;
  auto mesh = std::make_shared<const TriMesh>(square_mesh(n));
  const int nn = mesh->node_count();
  Vector k(nn, 1.0), f(nn), exact(nn);
  for (int i = 0; i < nn; ++i) {
    const Point p = mesh->nodes[i];
    exact[i] = std::sin(pi * p.x) * std::sin(pi * p.y);
    f[i] = 2.0 * pi * pi * exact[i];
  }
  const AssembledSystem sys = assemble_system(ProblemKind::Darcy, mesh, k, f);
  const Vector u = sys.scatter(SparseDirectSolver(sys.k).solve(sys.f));
  const Vector w = nodal_areas(*mesh);
  double err = 0.0;
  for (int i = 0; i < nn; ++i) err += w[i] * (u[i] - exact[i]) * (u[i] - exact[i]);
  return std::sqrt(err);
}

}  // namespace hints
