#include "hints/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <utility>

#include "hints/error.hpp"

namespace hints {

namespace {

constexpr std::array<std::pair<GeometryTag, std::string_view>, 5> kGeometryNames{{
    {GeometryTag::LShape, "lshape"},
    {GeometryTag::LShapeCircle, "lshape-circle"},
    {GeometryTag::LShapeTriangle, "lshape-triangle"},
    {GeometryTag::Square, "square"},
    {GeometryTag::SquareCircle, "square-circle"},
}};

// Structured grid restricted to the cells selected by `keep`; nodes are
// numbered row-major over the retained ones.
template <typename Keep>
TriMesh structured_mesh(int n, GeometryTag tag, Keep keep) {
  const int np = n + 1;
  std::vector<int> node_id(static_cast<std::size_t>(np) * np, -1);
  std::vector<std::array<int, 4>> cells;
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      const Point c{(i + 0.5) / n, (j + 0.5) / n};
      if (!keep(c)) continue;
      cells.push_back({j * np + i, j * np + i + 1, (j + 1) * np + i, (j + 1) * np + i + 1});
      for (int v : cells.back()) node_id[v] = 0;
    }
  }
  TriMesh mesh;
  mesh.geometry_tag = tag;
  for (int j = 0; j < np; ++j) {
    for (int i = 0; i < np; ++i) {
      int& id = node_id[j * np + i];
      if (id < 0) continue;
      id = mesh.node_count();
      mesh.nodes.push_back({static_cast<double>(i) / n, static_cast<double>(j) / n});
    }
  }
  mesh.triangles.reserve(cells.size() * 2);
  for (const auto& c : cells) {
    const int v00 = node_id[c[0]], v10 = node_id[c[1]], v01 = node_id[c[2]], v11 = node_id[c[3]];
    mesh.triangles.push_back({v00, v10, v11});
    mesh.triangles.push_back({v00, v11, v01});
  }

  // Every node on a boundary edge (an edge owned by a single triangle) is clamped.
  std::map<std::pair<int, int>, int> edge_count;
  for (const auto& t : mesh.triangles) {
    for (int e = 0; e < 3; ++e) {
      const int a = t[e], b = t[(e + 1) % 3];
      ++edge_count[{std::min(a, b), std::max(a, b)}];
    }
  }
  std::vector<bool> on_boundary(mesh.nodes.size(), false);
  for (const auto& [edge, count] : edge_count) {
    if (count == 1) on_boundary[edge.first] = on_boundary[edge.second] = true;
  }
  for (int i = 0; i < mesh.node_count(); ++i) {
    if (on_boundary[i]) mesh.dirichlet_nodes.push_back(i);
  }
  return mesh;
}

int find_root(std::vector<int>& parent, int x) {
  while (parent[x] != x) {
    parent[x] = parent[parent[x]];
    x = parent[x];
  }
  return x;
}

bool is_edge_connected(const TriMesh& mesh) {
  if (mesh.triangles.empty()) return false;
  std::vector<int> parent(mesh.triangles.size());
  std::iota(parent.begin(), parent.end(), 0);
  std::map<std::pair<int, int>, int> owner;
  for (int t = 0; t < mesh.triangle_count(); ++t) {
    const auto& tri = mesh.triangles[t];
    for (int e = 0; e < 3; ++e) {
      const int a = tri[e], b = tri[(e + 1) % 3];
      auto [it, inserted] = owner.emplace(std::pair{std::min(a, b), std::max(a, b)}, t);
      if (!inserted) parent[find_root(parent, t)] = find_root(parent, it->second);
    }
  }
  const int root = find_root(parent, 0);
  for (int t = 1; t < mesh.triangle_count(); ++t) {
    if (find_root(parent, t) != root) return false;
  }
  return true;
}

bool point_in_triangle(Point p, Point a, Point b, Point c, double tol) {
  const double area = signed_area(a, b, c);
  const double l0 = signed_area(p, b, c) / area;
  const double l1 = signed_area(a, p, c) / area;
  const double l2 = 1.0 - l0 - l1;
  return l0 >= -tol && l1 >= -tol && l2 >= -tol;
}

}  // namespace

std::string_view to_string(GeometryTag tag) {
  for (const auto& [t, name] : kGeometryNames) {
    if (t == tag) return name;
  }
  return "unknown";
}

GeometryTag geometry_from_string(std::string_view name) {
  for (const auto& [t, n] : kGeometryNames) {
    if (n == name) return t;
  }
  throw ConfigError("unknown geometry '" + std::string(name) + "'");
}

double signed_area(Point a, Point b, Point c) {
  return 0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y));
}

bool contains(const CutoutSpec& spec, Point p) {
  return std::visit(
      [p](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Circle>) {
          const double dx = p.x - s.center.x, dy = p.y - s.center.y;
          return dx * dx + dy * dy <= s.radius * s.radius;
        } else {
          return point_in_triangle(p, s.a, s.b, s.c, 0.0);
        }
      },
      spec);
}

Point interior_point(const CutoutSpec& spec) {
  if (const auto* c = std::get_if<Circle>(&spec)) return c->center;
  const auto& t = std::get<Triangle>(spec);
  return {(t.a.x + t.b.x + t.c.x) / 3.0, (t.a.y + t.b.y + t.c.y) / 3.0};
}

void validate(const CutoutSpec& spec) {
  if (const auto* c = std::get_if<Circle>(&spec)) {
    if (!(c->radius > 0.0)) throw ConfigError("cutout circle radius must be positive");
    return;
  }
  const auto& t = std::get<Triangle>(spec);
  if (std::abs(signed_area(t.a, t.b, t.c)) < 1e-14) {
    throw ConfigError("cutout triangle vertices are collinear");
  }
}

bool contains(const VoidRegion& region, Point p) {
  if (std::holds_alternative<LQuadrant>(region)) return p.x >= 0.5 && p.y >= 0.5;
  if (const auto* c = std::get_if<Circle>(&region)) return contains(CutoutSpec{*c}, p);
  return contains(CutoutSpec{std::get<Triangle>(region)}, p);
}

std::vector<bool> TriMesh::dirichlet_flags() const {
  std::vector<bool> flags(nodes.size(), false);
  for (int i : dirichlet_nodes) flags[i] = true;
  return flags;
}

std::vector<VoidRegion> TriMesh::void_regions() const {
  std::vector<VoidRegion> regions;
  if (geometry_tag == GeometryTag::LShape || geometry_tag == GeometryTag::LShapeCircle ||
      geometry_tag == GeometryTag::LShapeTriangle) {
    regions.emplace_back(LQuadrant{});
  }
  for (const auto& c : cutouts) {
    std::visit([&](const auto& s) { regions.emplace_back(s); }, c);
  }
  return regions;
}

bool TriMesh::in_void(Point p) const {
  for (const auto& r : void_regions()) {
    if (contains(r, p)) return true;
  }
  return false;
}

double triangle_area(const TriMesh& mesh, int t) {
  const auto& tri = mesh.triangles[t];
  return signed_area(mesh.nodes[tri[0]], mesh.nodes[tri[1]], mesh.nodes[tri[2]]);
}

double total_area(const TriMesh& mesh) {
  double area = 0.0;
  for (int t = 0; t < mesh.triangle_count(); ++t) area += triangle_area(mesh, t);
  return area;
}

Point centroid(const TriMesh& mesh, int t) {
  const auto& tri = mesh.triangles[t];
  const Point& a = mesh.nodes[tri[0]];
  const Point& b = mesh.nodes[tri[1]];
  const Point& c = mesh.nodes[tri[2]];
  return {(a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0};
}

TriMesh square_mesh(int n) {
  if (n < 1) throw ConfigError("square_mesh: n must be >= 1");
  return structured_mesh(n, GeometryTag::Square, [](Point) { return true; });
}

TriMesh l_shape_mesh(int n) {
  if (n < 2 || n % 2 != 0) throw ConfigError("l_shape_mesh: n must be even and >= 2");
  return structured_mesh(n, GeometryTag::LShape,
                         [](Point c) { return !(c.x >= 0.5 && c.y >= 0.5); });
}

TriMesh apply_cutout(const TriMesh& base, const CutoutSpec& spec) {
  validate(spec);
  std::vector<std::array<int, 3>> kept;
  kept.reserve(base.triangles.size());
  for (int t = 0; t < base.triangle_count(); ++t) {
    if (!contains(spec, centroid(base, t))) kept.push_back(base.triangles[t]);
  }
  if (kept.size() == base.triangles.size()) {
    // Nothing removed: fine if the region is already void (repeat application),
    // otherwise the cutout is smaller than the mesh resolution.
    const Point probe = interior_point(spec);
    for (int t = 0; t < base.triangle_count(); ++t) {
      const auto& tri = base.triangles[t];
      if (point_in_triangle(probe, base.nodes[tri[0]], base.nodes[tri[1]], base.nodes[tri[2]],
                            1e-12)) {
        throw ConfigError("apply_cutout: cutout removes no triangles at this mesh resolution");
      }
    }
    return base;
  }

  std::vector<int> remap(base.nodes.size(), -1);
  for (const auto& tri : kept) {
    for (int v : tri) remap[v] = 0;
  }
  TriMesh out;
  out.geometry_tag = base.geometry_tag;
  out.cutouts = base.cutouts;
  out.cutouts.push_back(spec);
  for (int i = 0; i < base.node_count(); ++i) {
    if (remap[i] < 0) continue;
    remap[i] = out.node_count();
    out.nodes.push_back(base.nodes[i]);
  }
  out.triangles.reserve(kept.size());
  for (const auto& tri : kept) out.triangles.push_back({remap[tri[0]], remap[tri[1]], remap[tri[2]]});
  for (int d : base.dirichlet_nodes) {
    if (remap[d] >= 0) out.dirichlet_nodes.push_back(remap[d]);
  }
  if (!is_edge_connected(out)) throw ConfigError("apply_cutout: cutout disconnects the mesh");
  return out;
}

std::vector<double> nodal_areas(const TriMesh& mesh) {
  std::vector<double> areas(mesh.nodes.size(), 0.0);
  for (int t = 0; t < mesh.triangle_count(); ++t) {
    const double a3 = triangle_area(mesh, t) / 3.0;
    for (int v : mesh.triangles[t]) areas[v] += a3;
  }
  return areas;
}

CutoutSpec task1_circle() { return Circle{{0.25, 0.25}, 0.15}; }
CutoutSpec task2_triangle() { return Triangle{{0.2, 0.1}, {0.6, 0.4}, {0.3, 0.4}}; }
CutoutSpec task3_circle() { return Circle{{0.5, 0.5}, 0.15}; }

TriMesh make_geometry(GeometryTag tag, int n) {
  TriMesh mesh;
  switch (tag) {
    case GeometryTag::LShape:
      return l_shape_mesh(n);
    case GeometryTag::LShapeCircle:
      mesh = apply_cutout(l_shape_mesh(n), task1_circle());
      break;
    case GeometryTag::LShapeTriangle:
      mesh = apply_cutout(l_shape_mesh(n), task2_triangle());
      break;
    case GeometryTag::Square:
      return square_mesh(n);
    case GeometryTag::SquareCircle:
      mesh = apply_cutout(square_mesh(n), task3_circle());
      break;
  }
  mesh.geometry_tag = tag;
  return mesh;
}

void validate(const TriMesh& mesh) {
  const int n = mesh.node_count();
  for (int t = 0; t < mesh.triangle_count(); ++t) {
    for (int v : mesh.triangles[t]) {
      if (v < 0 || v >= n) throw ConfigError("triangle references a missing node");
    }
    if (!(triangle_area(mesh, t) > 0.0)) {
      throw ConfigError("triangle " + std::to_string(t) + " is not counter-clockwise");
    }
  }
  if (!std::is_sorted(mesh.dirichlet_nodes.begin(), mesh.dirichlet_nodes.end())) {
    throw ConfigError("dirichlet node list is not sorted");
  }
  for (int d : mesh.dirichlet_nodes) {
    if (d < 0 || d >= n) throw ConfigError("dirichlet node index out of range");
  }
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return std::pair{mesh.nodes[a].x, mesh.nodes[a].y} < std::pair{mesh.nodes[b].x, mesh.nodes[b].y};
  });
  for (int k = 1; k < n; ++k) {
    const Point& p = mesh.nodes[order[k - 1]];
    const Point& q = mesh.nodes[order[k]];
    if (std::abs(p.x - q.x) <= 1e-12 && std::abs(p.y - q.y) <= 1e-12) {
      throw ConfigError("coincident nodes in mesh");
    }
  }
}

nlohmann::json mesh_to_json(const TriMesh& mesh) {
  nlohmann::json j;
  j["geometry_tag"] = std::string(to_string(mesh.geometry_tag));
  auto& nodes = j["nodes"] = nlohmann::json::array();
  for (const auto& p : mesh.nodes) nodes.push_back({p.x, p.y});
  auto& tris = j["triangles"] = nlohmann::json::array();
  for (const auto& t : mesh.triangles) tris.push_back({t[0], t[1], t[2]});
  j["dirichlet"] = mesh.dirichlet_nodes;
  auto& cuts = j["cutouts"] = nlohmann::json::array();
  for (const auto& c : mesh.cutouts) {
    if (const auto* circle = std::get_if<Circle>(&c)) {
      cuts.push_back({{"kind", "circle"},
                      {"center", {circle->center.x, circle->center.y}},
                      {"radius", circle->radius}});
    } else {
      const auto& t = std::get<Triangle>(c);
      cuts.push_back({{"kind", "triangle"},
                      {"vertices", {{t.a.x, t.a.y}, {t.b.x, t.b.y}, {t.c.x, t.c.y}}}});
    }
  }
  return j;
}

TriMesh mesh_from_json(const nlohmann::json& j) {
  try {
    TriMesh mesh;
    mesh.geometry_tag = geometry_from_string(j.at("geometry_tag").get<std::string>());
    for (const auto& p : j.at("nodes")) mesh.nodes.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    for (const auto& t : j.at("triangles")) {
      mesh.triangles.push_back({t.at(0).get<int>(), t.at(1).get<int>(), t.at(2).get<int>()});
    }
    mesh.dirichlet_nodes = j.at("dirichlet").get<std::vector<int>>();
    if (j.contains("cutouts")) {
      for (const auto& c : j.at("cutouts")) {
        const auto kind = c.at("kind").get<std::string>();
        if (kind == "circle") {
          mesh.cutouts.emplace_back(Circle{{c.at("center").at(0).get<double>(), c.at("center").at(1).get<double>()},
                                           c.at("radius").get<double>()});
        } else if (kind == "triangle") {
          const auto& v = c.at("vertices");
          auto pt = [&](int k) { return Point{v.at(k).at(0).get<double>(), v.at(k).at(1).get<double>()}; };
          mesh.cutouts.emplace_back(Triangle{pt(0), pt(1), pt(2)});
        } else {
          throw ConfigError("unknown cutout kind '" + kind + "'");
        }
      }
    }
    validate(mesh);
    return mesh;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed mesh JSON: ") + e.what());
  }
}

}  // namespace hints
