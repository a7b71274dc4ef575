#include "hints/field.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Cholesky>

#include "hints/error.hpp"
#include "hints/rng.hpp"

namespace hints {

GridField GridField::constant(double c) {
  GridField f;
  std::fill(f.values.begin(), f.values.end(), c);
  return f;
}

double GridField::interpolate(Point p) const {
  constexpr int last = kGridSize - 1;
  const double gx = std::clamp(p.x, 0.0, 1.0) * last;
  const double gy = std::clamp(p.y, 0.0, 1.0) * last;
  const int i = std::min(static_cast<int>(gx), last - 1);
  const int j = std::min(static_cast<int>(gy), last - 1);
  const double tx = gx - i, ty = gy - j;
  return (1 - tx) * (1 - ty) * at(i, j) + tx * (1 - ty) * at(i + 1, j) + (1 - tx) * ty * at(i, j + 1) +
         tx * ty * at(i + 1, j + 1);
}

GridField GridField::transposed() const {
  GridField t;
  for (int j = 0; j < kGridSize; ++j) {
    for (int i = 0; i < kGridSize; ++i) t.at(i, j) = at(j, i);
  }
  return t;
}

double GridField::norm() const { return norm2(values); }

double grf_kernel(const GrfSpec& spec, Point a, Point b) {
  const double dx = a.x - b.x, dy = a.y - b.y;
  return spec.std * spec.std * std::exp(-(dx * dx + dy * dy) / (2.0 * spec.corr_len * spec.corr_len));
}

GrfFactor grf_factor(const GrfSpec& spec) {
  if (!(spec.std >= 0.0) || !(spec.corr_len > 0.0)) {
    throw ConfigError("GRF spec requires std >= 0 and corr_len > 0");
  }
  GrfFactor factor{spec, DenseMatrix::Zero(kGridPoints, kGridPoints)};
  if (spec.std == 0.0) return factor;
  DenseMatrix cov(kGridPoints, kGridPoints);
  for (int q = 0; q < kGridPoints; ++q) {
    for (int p = 0; p < kGridPoints; ++p) cov(p, q) = grf_kernel(spec, GridField::coord(p), GridField::coord(q));
  }
  cov.diagonal().array() += 1e-10;
  Eigen::LLT<DenseMatrix> llt(cov);
  if (llt.info() != Eigen::Success) throw NumericalError("grf_factor: Cholesky factorization failed");
  factor.lower = llt.matrixL();
  return factor;
}

GridField grf_sample(const GrfFactor& factor, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::VectorXd z(kGridPoints);
  rng.fill_normal({z.data(), static_cast<std::size_t>(kGridPoints)});
  const Eigen::VectorXd x = factor.lower.triangularView<Eigen::Lower>() * z;
  GridField f;
  for (int p = 0; p < kGridPoints; ++p) f.values[p] = factor.spec.mean + x[p];
  return f;
}

Vector grid_to_mesh(const GridField& field, const TriMesh& mesh) {
  Vector out(mesh.nodes.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = field.interpolate(mesh.nodes[i]);
  return out;
}

GridLocator::GridLocator(const TriMesh& mesh) : samples_(kGridPoints), node_count_(mesh.node_count()) {
  constexpr double tol = 1e-12;
  for (int flat = 0; flat < kGridPoints; ++flat) {
    const Point p = GridField::coord(flat);
    if (mesh.in_void(p)) continue;
    for (int t = 0; t < mesh.triangle_count(); ++t) {
      const auto& tri = mesh.triangles[t];
      const Point& a = mesh.nodes[tri[0]];
      const Point& b = mesh.nodes[tri[1]];
      const Point& c = mesh.nodes[tri[2]];
      if (p.x < std::min({a.x, b.x, c.x}) - tol || p.x > std::max({a.x, b.x, c.x}) + tol ||
          p.y < std::min({a.y, b.y, c.y}) - tol || p.y > std::max({a.y, b.y, c.y}) + tol) {
        continue;
      }
      const double area = signed_area(a, b, c);
      const double l0 = signed_area(p, b, c) / area;
      const double l1 = signed_area(a, p, c) / area;
      const double l2 = 1.0 - l0 - l1;
      if (l0 < -tol || l1 < -tol || l2 < -tol) continue;
      samples_[flat] = {t, tri, {l0, l1, l2}};
      break;
    }
  }
}

GridField GridLocator::to_grid(std::span<const double> nodal) const {
  if (nodal.size() != static_cast<std::size_t>(node_count_)) {
    throw ConfigError("mesh_to_grid: nodal vector length does not match the mesh");
  }
  GridField f;
  for (int flat = 0; flat < kGridPoints; ++flat) {
    const Sample& s = samples_[flat];
    if (s.triangle < 0) continue;
    f.values[flat] =
        s.weights[0] * nodal[s.nodes[0]] + s.weights[1] * nodal[s.nodes[1]] + s.weights[2] * nodal[s.nodes[2]];
  }
  return f;
}

GridField mesh_to_grid(std::span<const double> nodal, const TriMesh& mesh) {
  return GridLocator(mesh).to_grid(nodal);
}

GridField mask_region(const GridField& field, const VoidRegion& region) {
  GridField out = field;
  for (int flat = 0; flat < kGridPoints; ++flat) {
    if (contains(region, GridField::coord(flat))) out.values[flat] = 0.0;
  }
  return out;
}

GridField mask_cutout(const GridField& field, const CutoutSpec& spec) {
  return std::visit([&](const auto& s) { return mask_region(field, VoidRegion{s}); }, spec);
}

GridField mask_geometry(const GridField& field, const TriMesh& mesh) {
  GridField out = field;
  for (const auto& region : mesh.void_regions()) out = mask_region(out, region);
  return out;
}

}  // namespace hints
