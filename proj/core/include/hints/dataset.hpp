#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "hints/deeponet.hpp"
#include "hints/fem.hpp"
#include "hints/field.hpp"
#include "hints/mesh.hpp"

namespace hints {

/// Random-field settings for one problem family.
struct SamplingConfig {
  GrfSpec coeff{1.0, 0.3, 0.1};  // k or E
  GrfSpec load{0.0, 0.1, 0.1};   // f
  double min_coeff = 0.05;       // coefficient draws dipping below are redrawn
  int max_redraws = 1000;
  MaterialParams material;

  void validate() const;
};

/// Raw (unmasked) grid fields of one problem instance.
struct SampleFields {
  GridField coeff;
  GridField load;
};

/// Draws samples deterministically from (seed, index); the Cholesky factors
/// are computed once.
class SampleGenerator {
 public:
  explicit SampleGenerator(const SamplingConfig& config);
  SampleFields draw(std::uint64_t seed, std::uint64_t index) const;
  const SamplingConfig& config() const { return config_; }

 private:
  SamplingConfig config_;
  GrfFactor coeff_factor_;
  GrfFactor load_factor_;
};

/// Assembles K u = f on the mesh. Elasticity loads are x-directed: (f, 0).
AssembledSystem build_system(ProblemKind kind, std::shared_ptr<const TriMesh> mesh, const SampleFields& fields,
                             const MaterialParams& material = {});

/// Load channel of a training input: the nodal load with clamped nodes
/// zeroed, sampled back on the grid. Equals the residual channel of the
/// zero initial guess.
GridField load_channel(const TriMesh& mesh, const GridField& load, const GridLocator& locator);

struct DatasetHeader {
  std::uint32_t version = 1;
  ProblemKind problem = ProblemKind::Darcy;
  GeometryTag geometry = GeometryTag::LShape;
  std::uint32_t grid = kGridSize;
  std::uint32_t mesh_n = 32;
  std::uint32_t n_nodes = 0;
  std::uint32_t n_samples = 0;
};

struct DatasetRecord {
  SampleFields fields;
  Vector solution;  // full nodal layout, components interleaved
};

struct Dataset {
  DatasetHeader header;
  std::vector<DatasetRecord> records;
};

/// Draws, assembles and solves n_samples instances. Samples are independent,
/// so `jobs` threads only change the speed, never the contents.
Dataset generate_dataset(ProblemKind problem, GeometryTag geometry, int mesh_n, int n_samples, std::uint64_t seed,
                         const SamplingConfig& sampling = {}, int jobs = 1);

void write_dataset(std::ostream& os, const Dataset& data);
void write_dataset(const std::string& path, const Dataset& data);
Dataset read_dataset(std::istream& is);
/// Reads and spot-checks the first and last record: ||K u - f|| <= 1e-10 ||f||
/// after re-assembly. Throws IoError on format problems, NumericalError on a
/// failed check.
Dataset read_dataset(const std::string& path, const SamplingConfig& sampling = {});

/// Relative residual ||K u - f|| / ||f|| of one stored record.
double record_residual(const Dataset& data, const TriMesh& mesh, std::size_t index,
                       const MaterialParams& material = {});

/// Network-ready samples: channel 0 the zero-padded coefficient, channel 1
/// the load channel; targets the stored solution at every mesh node.
OperatorDataset to_operator_dataset(const Dataset& data, const TriMesh& mesh);

}  // namespace hints
