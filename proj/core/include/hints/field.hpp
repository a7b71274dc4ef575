#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "hints/linalg.hpp"
#include "hints/mesh.hpp"

namespace hints {

inline constexpr int kGridSize = 31;
inline constexpr int kGridPoints = kGridSize * kGridSize;

/// Function values on the fixed 31x31 sensor grid over [0,1]^2, stored
/// row-major: values[j * 31 + i] sits at (x, y) = (i / 30, j / 30).
struct GridField {
  std::vector<double> values = std::vector<double>(kGridPoints, 0.0);

  static GridField constant(double c);
  static Point coord(int i, int j) {
    return {static_cast<double>(i) / (kGridSize - 1), static_cast<double>(j) / (kGridSize - 1)};
  }
  static Point coord(int flat) { return coord(flat % kGridSize, flat / kGridSize); }

  double& at(int i, int j) { return values[j * kGridSize + i]; }
  double at(int i, int j) const { return values[j * kGridSize + i]; }
  /// Bilinear interpolation at an arbitrary point of [0,1]^2 (clamped).
  double interpolate(Point p) const;
  /// Mirror across the diagonal y = x.
  GridField transposed() const;
  double norm() const;
};

struct GrfSpec {
  double mean = 0.0;
  double std = 1.0;
  double corr_len = 0.1;
};

/// Squared-exponential covariance std^2 exp(-d^2 / (2 corr_len^2)).
double grf_kernel(const GrfSpec& spec, Point a, Point b);

/// Lower Cholesky factor of the grid covariance plus 1e-10 I jitter.
struct GrfFactor {
  GrfSpec spec;
  DenseMatrix lower;
};

GrfFactor grf_factor(const GrfSpec& spec);
/// mean + L z with z standard normal drawn from Rng(seed).
GridField grf_sample(const GrfFactor& factor, std::uint64_t seed);

Vector grid_to_mesh(const GridField& field, const TriMesh& mesh);

/// Point location of every grid point in a mesh, computed once and reused.
class GridLocator {
 public:
  explicit GridLocator(const TriMesh& mesh);

  /// Barycentric interpolation of nodal values; points in a void region of
  /// the domain, or not covered by any triangle, receive 0.
  GridField to_grid(std::span<const double> nodal) const;
  bool covered(int flat) const { return samples_[flat].triangle >= 0; }

 private:
  struct Sample {
    int triangle = -1;
    std::array<int, 3> nodes{};
    std::array<double, 3> weights{};
  };
  std::vector<Sample> samples_;
  int node_count_ = 0;
};

GridField mesh_to_grid(std::span<const double> nodal, const TriMesh& mesh);

/// Zeroes grid entries inside the region; idempotent.
GridField mask_region(const GridField& field, const VoidRegion& region);
GridField mask_cutout(const GridField& field, const CutoutSpec& spec);
/// Zero-padding of every void region of the mesh's geometry.
GridField mask_geometry(const GridField& field, const TriMesh& mesh);

}  // namespace hints
