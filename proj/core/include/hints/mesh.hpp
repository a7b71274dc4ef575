#pragma once

#include <array>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace hints {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

enum class GeometryTag { LShape, LShapeCircle, LShapeTriangle, Square, SquareCircle };

std::string_view to_string(GeometryTag tag);
GeometryTag geometry_from_string(std::string_view name);

struct Circle {
  Point center;
  double radius = 0.0;
};

struct Triangle {
  Point a, b, c;
};

/// Region removed from a base domain. Contains-tests are closed (boundary
/// points count as inside).
using CutoutSpec = std::variant<Circle, Triangle>;

bool contains(const CutoutSpec& spec, Point p);
/// A point strictly inside the cutout, used to detect whether it is already void.
Point interior_point(const CutoutSpec& spec);
/// Throws ConfigError on a non-positive radius or collinear vertices.
void validate(const CutoutSpec& spec);

/// The removed quadrant [0.5, 1)^2 of the L-shaped base domain.
struct LQuadrant {};
using VoidRegion = std::variant<Circle, Triangle, LQuadrant>;
bool contains(const VoidRegion& region, Point p);

/// Triangulated 2D domain inside the unit square.
struct TriMesh {
  std::vector<Point> nodes;
  std::vector<std::array<int, 3>> triangles;  // counter-clockwise
  std::vector<int> dirichlet_nodes;           // sorted ascending
  GeometryTag geometry_tag = GeometryTag::Square;
  std::vector<CutoutSpec> cutouts;  // applied cutouts, in order

  int node_count() const { return static_cast<int>(nodes.size()); }
  int triangle_count() const { return static_cast<int>(triangles.size()); }
  std::vector<bool> dirichlet_flags() const;
  /// Regions of the unit square that are not part of this domain.
  std::vector<VoidRegion> void_regions() const;
  bool in_void(Point p) const;
};

double signed_area(Point a, Point b, Point c);
double triangle_area(const TriMesh& mesh, int t);
double total_area(const TriMesh& mesh);
Point centroid(const TriMesh& mesh, int t);

/// Structured unit-square mesh with n cells per side, SW-NE diagonals, all
/// outer nodes clamped.
TriMesh square_mesh(int n);
/// Unit square minus [0.5,1)^2; n must be even so the re-entrant corner is a node.
TriMesh l_shape_mesh(int n);
/// Removes every triangle whose centroid lies in the cutout, then compacts
/// nodes. The new hole boundary is left natural (no Dirichlet marks).
TriMesh apply_cutout(const TriMesh& base, const CutoutSpec& spec);

/// Lumped-mass weights: a third of each incident triangle area.
std::vector<double> nodal_areas(const TriMesh& mesh);

/// Cutouts of the named target geometries (radius 0.15 circles, Task2 triangle).
CutoutSpec task1_circle();
CutoutSpec task2_triangle();
CutoutSpec task3_circle();
/// Builds the named geometry preset at resolution n.
TriMesh make_geometry(GeometryTag tag, int n);

/// Throws ConfigError if any structural invariant is violated.
void validate(const TriMesh& mesh);

nlohmann::json mesh_to_json(const TriMesh& mesh);
TriMesh mesh_from_json(const nlohmann::json& j);

}  // namespace hints
