#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <sstream>

#include "hints/dataset.hpp"
#include "hints/error.hpp"
#include "hints/harness.hpp"
#include "hints/hints.hpp"

using namespace hints;

namespace {

Arch small_arch(int n_out = 1) {
  Arch a;
  a.conv_channels = {2, 3, 4, 5, 6};
  a.branch_widths = {6, 8, 4 * n_out};
  a.trunk_widths = {2, 7, 4 * n_out};
  a.n_out = n_out;
  return a;
}

DeepONetParams zero_params(const Arch& arch) {
  DeepONetParams p = init_params(arch, 0);
  std::fill(p.values.begin(), p.values.end(), 0.0);
  return p;
}

struct Problem {
  AssembledSystem system;
  GridField coeff;
};

Problem darcy_problem(GeometryTag tag, int n, std::uint64_t index) {
  auto mesh = std::make_shared<const TriMesh>(make_geometry(tag, n));
  const SampleGenerator gen(SamplingConfig{});
  const SampleFields f = gen.draw(5, index);
  return {build_system(ProblemKind::Darcy, mesh, f), f.coeff};
}

HintsConfig fixed_budget(int iterations) {
  HintsConfig c;
  c.max_iterations = iterations;
  c.tolerance = 1e-300;
  return c;
}

}  // namespace

TEST(GsSolve, ToleranceAboveSolutionNormConvergesImmediately) {
  const AssembledSystem s = debug_system();
  HintsConfig c;
  c.tolerance = 1.0;  // threshold max(1, sqrt 2) = sqrt 2 = ||u* - 0||
  const SolveResult r = gs_solve(s, c);
  ASSERT_TRUE(r.trace.converged_at.has_value());
  EXPECT_EQ(*r.trace.converged_at, 0);
  EXPECT_EQ(r.trace.records.size(), 1u);
}

TEST(GsSolve, TwoByTwoErrorStrictlyDecreases) {
  const AssembledSystem s = debug_system();
  const SolveResult r = gs_solve(s, HintsConfig{});
  ASSERT_TRUE(r.trace.converged_at.has_value());
  EXPECT_NEAR(r.trace.records[0].error_norm, std::sqrt(2.0), 1e-15);
  // e_1 = (1 - 1.5, 1 - 0.75)
  EXPECT_NEAR(r.trace.records[1].error_norm, std::hypot(0.5, 0.25), 1e-15);
  for (std::size_t i = 1; i < r.trace.records.size(); ++i) {
    EXPECT_LT(r.trace.records[i].error_norm, r.trace.records[i - 1].error_norm);
    EXPECT_EQ(r.trace.records[i].kind, StepKind::GaussSeidel);
  }
  EXPECT_LE(r.trace.records.back().error_norm, r.trace.threshold);
  EXPECT_EQ(r.trace.iterations(), *r.trace.converged_at);
}

TEST(GsSolve, EnergyNormErrorNeverIncreases) {
  const Problem p = darcy_problem(GeometryTag::LShape, 12, 0);
  const SolveReference ref = make_reference(p.system, false);
  Vector u(p.system.size(), 0.0), e(u.size());
  double prev = std::numeric_limits<double>::infinity();
  for (int s = 0; s < 200; ++s) {
    gauss_seidel_sweep(p.system.k, p.system.f, u);
    for (std::size_t i = 0; i < u.size(); ++i) e[i] = ref.u_star[i] - u[i];
    const double ea = energy_norm(p.system.k, e);
    EXPECT_LE(ea, prev * (1 + 1e-12)) << s;
    prev = ea;
  }
}

TEST(GsSolve, UnconvergedRunReportsMaxIterations) {
  const Problem p = darcy_problem(GeometryTag::LShape, 12, 1);
  const SolveResult r = gs_solve(p.system, fixed_budget(7));
  EXPECT_FALSE(r.trace.converged_at.has_value());
  EXPECT_EQ(r.trace.iterations(), 7);
  EXPECT_EQ(r.trace.records.size(), 8u);
}

TEST(BranchInput, ZeroResidualGivesZeroChannel) {
  const Problem p = darcy_problem(GeometryTag::LShape, 12, 2);
  const Vector r(p.system.full_size(), 0.0);
  const BranchInput in = residual_to_branch_input(p.system, r, p.coeff, HintsConfig{});
  EXPECT_TRUE(std::isfinite(in.scale));
  EXPECT_TRUE(in.values.tail(kGridPoints).isZero(0.0));
  EXPECT_FALSE(in.values.head(kGridPoints).isZero(0.0));
}

TEST(BranchInput, ResidualChannelIsScaleInvariant) {
  const Problem p = darcy_problem(GeometryTag::LShapeCircle, 16, 3);
  const HintsConfig c;
  Vector r = p.system.scatter(p.system.f);
  const BranchInput a = residual_to_branch_input(p.system, r, p.coeff, c);
  for (double& v : r) v *= 1e-4;
  const BranchInput b = residual_to_branch_input(p.system, r, p.coeff, c);
  EXPECT_NEAR(a.values.tail(kGridPoints).norm(), c.residual_ref_scale, 1e-12);
  EXPECT_LE((a.values - b.values).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(b.scale / a.scale, 1e4, 1e-6);
}

TEST(BranchInput, ZeroGuessMatchesLoadChannel) {
  auto mesh = std::make_shared<const TriMesh>(make_geometry(GeometryTag::LShape, 16));
  const SampleFields f = SampleGenerator(SamplingConfig{}).draw(9, 0);
  const AssembledSystem s = build_system(ProblemKind::Darcy, mesh, f);
  const GridLocator loc(*mesh);
  const GridField load = load_channel(*mesh, f.load, loc);
  const BranchInput in = residual_to_branch_input(s, s.scatter(s.f), f.coeff, HintsConfig{}, 0, &loc);
  for (int k = 0; k < kGridPoints; ++k) {
    EXPECT_NEAR(in.values[kGridPoints + k], in.scale * load.values[k], 1e-10) << k;
  }
}

TEST(BranchInput, ElasticitySecondComponentIsMirrored) {
  auto mesh = std::make_shared<const TriMesh>(make_geometry(GeometryTag::SquareCircle, 12));
  const SampleFields f = SampleGenerator(SamplingConfig{}).draw(4, 0);
  const AssembledSystem s = build_system(ProblemKind::Elasticity, mesh, f);
  const int n = mesh->node_count();
  std::map<std::pair<long, long>, int> index;
  const auto key = [](Point q) { return std::pair{std::lround(q.x * 1e9), std::lround(q.y * 1e9)}; };
  for (int i = 0; i < n; ++i) index[key(mesh->nodes[i])] = i;

  Vector ry(2 * n, 0.0), rx(2 * n, 0.0);
  for (int i = 0; i < n; ++i) {
    const Point q = mesh->nodes[i];
    const double g = std::sin(4 * q.x) + q.y * q.y;
    ry[2 * i + 1] = g;
    const auto it = index.find(key({q.y, q.x}));
    ASSERT_NE(it, index.end());
    rx[2 * it->second] = g;
  }
  const HintsConfig c;
  const BranchInput a = residual_to_branch_input(s, ry, f.coeff, c, 1);
  const BranchInput b = residual_to_branch_input(s, rx, f.coeff.transposed(), c, 0);
  EXPECT_LE((a.values - b.values).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(HintsSolve, ElasticityNeedsSymmetricGeometry) {
  auto mesh = std::make_shared<const TriMesh>(make_geometry(GeometryTag::LShape, 8));
  const SampleFields f = SampleGenerator(SamplingConfig{}).draw(4, 0);
  const AssembledSystem s = build_system(ProblemKind::Elasticity, mesh, f);
  EXPECT_THROW(hints_solve(s, zero_params(small_arch(2)), f.coeff, fixed_budget(3)), ConfigError);
  EXPECT_THROW(hints_solve(s, zero_params(small_arch(1)), f.coeff, fixed_budget(3)), ConfigError);
}

TEST(HintsSolve, ZeroNetworkAlignsWithGaussSeidel) {
  const Problem p = darcy_problem(GeometryTag::LShape, 12, 4);
  const SolveReference ref = make_reference(p.system, false);
  const SolveResult h = hints_solve(p.system, zero_params(small_arch()), p.coeff, fixed_budget(35), &ref);
  const SolveResult g = gs_solve(p.system, fixed_budget(32), &ref);
  EXPECT_EQ(h.u, g.u);
  int gs_steps = 0;
  for (const auto& rec : h.trace.records) {
    if (rec.kind == StepKind::DeepONet) {
      EXPECT_EQ(rec.iteration % 10, 0);
    } else if (rec.kind == StepKind::GaussSeidel) {
      EXPECT_EQ(rec.error_norm, g.trace.records[++gs_steps].error_norm);
    }
  }
  EXPECT_EQ(gs_steps, 32);
}

TEST(HintsSolve, ErrorScalesWithLoad) {
  const Problem p = darcy_problem(GeometryTag::LShape, 12, 5);
  AssembledSystem scaled = p.system;
  const double alpha = 37.5;
  for (double& v : scaled.f) v *= alpha;
  const DeepONetParams params = init_params(small_arch(), 11);
  const HintsConfig c = fixed_budget(40);
  const SolveResult a = hints_solve(p.system, params, p.coeff, c);
  const SolveResult b = hints_solve(scaled, params, p.coeff, c);
  ASSERT_EQ(a.trace.records.size(), b.trace.records.size());
  for (std::size_t i = 0; i < a.trace.records.size(); ++i) {
    const double ea = a.trace.records[i].error_norm, eb = b.trace.records[i].error_norm;
    EXPECT_NEAR(eb, alpha * ea, 1e-9 * alpha * ea) << i;
  }
}

TEST(HintsSolve, NonFinitePredictionIsReported) {
  const Problem p = darcy_problem(GeometryTag::LShape, 8, 6);
  DeepONetParams params = init_params(small_arch(), 1);
  params.values[params.block(LayerKind::MergeBias, 0, true).offset] = std::nan("");
  EXPECT_THROW(hints_solve(p.system, params, p.coeff, fixed_budget(20)), NumericalError);
}

TEST(HintsSolve, ConvergedRunMeetsThreshold) {
  const Problem p = darcy_problem(GeometryTag::LShape, 8, 7);
  HintsConfig c;
  c.tolerance = 1e-8;
  const SolveResult r = hints_solve(p.system, init_params(small_arch(), 2), p.coeff, c);
  ASSERT_TRUE(r.trace.converged_at.has_value());
  EXPECT_LE(r.trace.records.back().error_norm, r.trace.threshold);
  EXPECT_GT(r.trace.records[r.trace.records.size() - 2].error_norm, r.trace.threshold);
}

TEST(Config, Validation) {
  HintsConfig c;
  c.ratio = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.tolerance = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.output_scale = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ModeErrors, ZeroAndUnitCases) {
  const AssembledSystem s = debug_system();
  const SolveReference ref = make_reference(s, true);
  const std::vector<int> tracked{0, 1};
  for (double e : mode_errors(*ref.basis, ref.u_star, ref.u_star, tracked)) EXPECT_EQ(e, 0.0);
  Vector u = ref.u_star;
  for (int i = 0; i < 2; ++i) u[i] -= ref.basis->eigenvectors(i, 1);
  const auto m = mode_errors(*ref.basis, ref.u_star, u, tracked);
  EXPECT_NEAR(m[0], 0.0, 1e-14);
  EXPECT_NEAR(m[1], 1.0, 1e-14);
  const std::vector<int> bad{2};
  EXPECT_THROW(mode_errors(*ref.basis, ref.u_star, u, bad), ConfigError);
}

TEST(ModeErrors, DefaultTrackedModes) {
  EXPECT_EQ(default_tracked_modes(100), (std::vector<int>{0, 1, 2, 50, 98, 99}));
  EXPECT_EQ(default_tracked_modes(2), (std::vector<int>{0, 1}));
}

TEST(ModeErrors, NegativeIndicesCountFromTheEnd) {
  const AssembledSystem s = debug_system();
  HintsConfig c;
  c.track_modes = {0, -1};
  const SolveResult r = gs_solve(s, c);
  EXPECT_EQ(r.trace.tracked_modes, (std::vector<int>{0, 1}));
  for (const auto& rec : r.trace.records) EXPECT_EQ(rec.mode_errors.size(), 2u);
  c.track_modes = {-3};
  EXPECT_THROW(gs_solve(s, c), ConfigError);
}

TEST(TraceCsv, HeaderAndRows) {
  const AssembledSystem s = debug_system();
  HintsConfig c;
  c.track_modes = {0, 1};
  const SolveResult r = gs_solve(s, c);
  std::ostringstream os;
  write_trace_csv(os, r.trace);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "iteration,step_kind,error_norm,residual_norm,mode_0,mode_1");
  std::getline(is, line);
  EXPECT_EQ(line.rfind("0,init,", 0), 0u);
  std::getline(is, line);
  EXPECT_EQ(line.rfind("1,gs,", 0), 0u);
  std::size_t rows = 2;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, r.trace.records.size());
}
