#pragma once

#include <array>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "hints/linalg.hpp"
#include "hints/mesh.hpp"

namespace hints {

enum class ProblemKind { Darcy, Elasticity };

std::string_view to_string(ProblemKind kind);
ProblemKind problem_from_string(std::string_view name);
inline int components(ProblemKind kind) { return kind == ProblemKind::Darcy ? 1 : 2; }

struct MaterialParams {
  double nu = 0.3;
};

using ElementMatrix3 = std::array<std::array<double, 3>, 3>;

/// P1 Darcy element matrix k * area * grad(phi_i) . grad(phi_j).
ElementMatrix3 darcy_element_matrix(Point a, Point b, Point c, double k);

/// Scalar stiffness of -div(k grad u); the element coefficient is the mean of
/// the three vertex values. Dirichlet rows are still present.
CsrMatrix assemble_darcy(const TriMesh& mesh, std::span<const double> k_nodal);

/// Plane-strain stiffness, dofs interleaved as (u0x, u0y, u1x, ...).
CsrMatrix assemble_elasticity(const TriMesh& mesh, std::span<const double> e_nodal, double nu);

/// Lumped load f_i * nodal_area_i. For vector problems f_nodal is interleaved
/// with `ncomp` entries per node.
Vector assemble_load(const TriMesh& mesh, std::span<const double> f_nodal, int ncomp = 1);

/// Constant element stresses (sigma_x, sigma_y, tau_xy) for a P1 displacement.
std::vector<std::array<double, 3>> element_stresses(const TriMesh& mesh, std::span<const double> e_nodal,
                                                    double nu, std::span<const double> u_full);

struct FreeDof {
  int node = 0;
  int component = 0;
};

/// Dirichlet-reduced linear system K u = f.
struct AssembledSystem {
  CsrMatrix k;
  Vector f;
  std::vector<FreeDof> free_dofs;
  ProblemKind kind = ProblemKind::Darcy;
  std::shared_ptr<const TriMesh> mesh;

  int size() const { return k.rows(); }
  int full_size() const { return mesh->node_count() * components(kind); }
  /// Reduced vector -> full nodal layout with zeros on clamped dofs.
  Vector scatter(std::span<const double> reduced) const;
  Vector gather(std::span<const double> full) const;
};

/// Eliminates homogeneous Dirichlet rows and columns.
AssembledSystem apply_dirichlet(const CsrMatrix& k, std::span<const double> f,
                                std::shared_ptr<const TriMesh> mesh, ProblemKind kind);

/// Assembles and reduces in one go. `load_nodal` has ncomp entries per node.
AssembledSystem assemble_system(ProblemKind kind, std::shared_ptr<const TriMesh> mesh,
                                std::span<const double> coeff_nodal, std::span<const double> load_nodal,
                                const MaterialParams& material = {});

/// Discrete L2 error (lumped weights) of the P1 solution of -lap u = 2 pi^2
/// sin(pi x) sin(pi y) on square_mesh(n).
double manufactured_solution_error(int n);

}  // namespace hints
