#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <sstream>

#include "hints/dataset.hpp"
#include "hints/error.hpp"
#include "hints/harness.hpp"

using namespace hints;

namespace {

std::string bytes_of(const Dataset& d) {
  std::ostringstream os;
  write_dataset(os, d);
  return os.str();
}

}  // namespace

TEST(Sampling, RedrawKeepsCoefficientPositive) {
  SamplingConfig c;
  c.coeff = {0.5, 0.3, 0.1};
  c.min_coeff = 0.05;
  const SampleGenerator gen(c);
  for (int i = 0; i < 5; ++i) {
    const SampleFields f = gen.draw(1, i);
    for (double v : f.coeff.values) EXPECT_GE(v, 0.05);
  }
}

TEST(Sampling, DrawIsDeterministicPerIndex) {
  const SampleGenerator gen(SamplingConfig{});
  EXPECT_EQ(gen.draw(3, 7).load.values, gen.draw(3, 7).load.values);
  EXPECT_NE(gen.draw(3, 7).load.values, gen.draw(3, 8).load.values);
  EXPECT_NE(gen.draw(3, 7).coeff.values, gen.draw(4, 7).coeff.values);
}

TEST(Dataset, EmptyIsValid) {
  const Dataset d = generate_dataset(ProblemKind::Darcy, GeometryTag::LShape, 8, 0, 1);
  std::istringstream is(bytes_of(d));
  const Dataset back = read_dataset(is);
  EXPECT_EQ(back.header.n_samples, 0u);
  EXPECT_TRUE(back.records.empty());
}

TEST(Dataset, SameSeedSameBytes) {
  const auto a = generate_dataset(ProblemKind::Darcy, GeometryTag::LShapeCircle, 10, 3, 42);
  const auto b = generate_dataset(ProblemKind::Darcy, GeometryTag::LShapeCircle, 10, 3, 42);
  const auto c = generate_dataset(ProblemKind::Darcy, GeometryTag::LShapeCircle, 10, 3, 43);
  EXPECT_EQ(bytes_of(a), bytes_of(b));
  EXPECT_NE(bytes_of(a), bytes_of(c));
}

TEST(Dataset, JobsDoNotChangeContents) {
  const auto a = generate_dataset(ProblemKind::Elasticity, GeometryTag::Square, 8, 5, 7, {}, 1);
  const auto b = generate_dataset(ProblemKind::Elasticity, GeometryTag::Square, 8, 5, 7, {}, 3);
  EXPECT_EQ(bytes_of(a), bytes_of(b));
}

TEST(Dataset, RoundTripIsByteIdentical) {
  const auto d = generate_dataset(ProblemKind::Elasticity, GeometryTag::SquareCircle, 8, 2, 5);
  const std::string once = bytes_of(d);
  std::istringstream is(once);
  const Dataset back = read_dataset(is);
  EXPECT_EQ(back.header.problem, ProblemKind::Elasticity);
  EXPECT_EQ(back.header.geometry, GeometryTag::SquareCircle);
  EXPECT_EQ(back.header.mesh_n, 8u);
  EXPECT_EQ(bytes_of(back), once);
}

TEST(Dataset, StoredSolutionsSolveTheSystem) {
  for (ProblemKind kind : {ProblemKind::Darcy, ProblemKind::Elasticity}) {
    const GeometryTag tag = kind == ProblemKind::Darcy ? GeometryTag::LShapeTriangle : GeometryTag::Square;
    const auto d = generate_dataset(kind, tag, 12, 3, 11);
    const TriMesh mesh = make_geometry(tag, 12);
    for (std::size_t i = 0; i < d.records.size(); ++i) EXPECT_LE(record_residual(d, mesh, i), 1e-10);
  }
}

TEST(Dataset, TruncatedFileIsAnIoError) {
  const std::string full = bytes_of(generate_dataset(ProblemKind::Darcy, GeometryTag::LShape, 8, 2, 1));
  for (std::size_t cut : {std::size_t{3}, full.size() / 2, full.size() - 1}) {
    std::istringstream is(full.substr(0, cut));
    EXPECT_THROW(read_dataset(is), IoError) << cut;
  }
  std::istringstream garbage("not a dataset at all, just text");
  EXPECT_THROW(read_dataset(garbage), IoError);
}

TEST(Dataset, MissingFileIsAnIoError) {
  EXPECT_THROW(read_dataset(std::string("/nonexistent/dir/data.bin")), IoError);
}

TEST(OperatorData, LoadChannelMatchesZeroGuessResidual) {
  const auto d = generate_dataset(ProblemKind::Darcy, GeometryTag::LShape, 12, 2, 3);
  auto mesh = std::make_shared<const TriMesh>(make_geometry(GeometryTag::LShape, 12));
  const OperatorDataset od = to_operator_dataset(d, *mesh);
  ASSERT_EQ(od.inputs.cols(), 2);
  ASSERT_EQ(od.targets.cols(), mesh->node_count());
  for (int j = 0; j < 2; ++j) {
    const AssembledSystem s = build_system(ProblemKind::Darcy, mesh, d.records[j].fields);
    const GridField r = residual_field(s, s.scatter(s.f), 0, GridLocator(*mesh));
    for (int k = 0; k < kGridPoints; ++k) EXPECT_NEAR(od.inputs(kGridPoints + k, j), r.values[k], 1e-12);
    for (int q = 0; q < mesh->node_count(); ++q) EXPECT_EQ(od.targets(j, q), d.records[j].solution[q]);
  }
}

TEST(OperatorData, NormalizationScalesLoadAndTargets) {
  const auto d = generate_dataset(ProblemKind::Darcy, GeometryTag::LShape, 12, 3, 8);
  const TriMesh mesh = make_geometry(GeometryTag::LShape, 12);
  const OperatorDataset raw = to_operator_dataset(d, mesh);
  const OperatorDataset norm = make_operator_dataset(d, mesh, 3.1, 2.0);
  for (int j = 0; j < 3; ++j) {
    const double n = norm.inputs.col(j).tail(kGridPoints).norm();
    EXPECT_NEAR(n, 3.1, 1e-12);
    const double s = 3.1 / raw.inputs.col(j).tail(kGridPoints).norm();
    EXPECT_LE((norm.targets.row(j) - 2.0 * s * raw.targets.row(j)).cwiseAbs().maxCoeff(),
              1e-12 * raw.targets.row(j).cwiseAbs().maxCoeff() * s);
    EXPECT_TRUE(norm.inputs.col(j).head(kGridPoints) == raw.inputs.col(j).head(kGridPoints));
  }
  const OperatorDataset unit = make_operator_dataset(d, mesh, 3.1, 1.0);
  const double k = unit_rms_scale(unit);
  const double rms = std::sqrt(unit.targets.squaredNorm() / static_cast<double>(unit.targets.size()));
  EXPECT_NEAR(k * rms, 1.0, 1e-12);
}
