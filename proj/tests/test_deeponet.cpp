#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "hints/deeponet.hpp"
#include "hints/error.hpp"
#include "hints/rng.hpp"

using namespace hints;

namespace {

// Small networks keep the finite-difference checks fast; they still contain
// every layer type (strided conv, ReLU dense, Tanh dense, merge bias).
Arch tiny_arch(int n_out) {
  Arch a;
  a.conv_channels = {2, 3, 4, 5, 6};
  a.branch_widths = {6, 8, 4 * n_out};
  a.trunk_widths = {2, 7, 4 * n_out};
  a.n_out = n_out;
  return a;
}

BranchInputs random_inputs(int batch, std::uint64_t seed) {
  Rng rng(seed);
  BranchInputs x(2 * 961, batch);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  return x;
}

std::vector<Point> random_coords(int q, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Point> c(q);
  for (auto& p : c) p = {rng.uniform(), rng.uniform()};
  return c;
}

DeepONetParams randomized(const Arch& arch, std::uint64_t seed, double bias_scale = 0.1) {
  DeepONetParams p = init_params(arch, seed);
  Rng rng(seed + 1);
  for (const auto& b : p.blocks) {
    if (!b.is_bias) continue;
    for (std::size_t i = 0; i < b.size(); ++i) p.values[b.offset + i] = bias_scale * rng.normal();
  }
  return p;
}

// Straightforward loop implementation used as an independent oracle.
std::vector<double> reference_forward(const DeepONetParams& p, const BranchInputs& x, int sample,
                                      const std::vector<Point>& coords) {
  const Arch& a = p.arch;
  const auto get = [&](const ParamBlock& b, int r, int c) { return p.values[b.offset + r * b.cols + c]; };
  int side = a.input_size;
  std::vector<double> act(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) act[i] = x(i, sample);  // (channel, row, col)
  for (std::size_t l = 0; l + 1 < a.conv_channels.size(); ++l) {
    const int cin = a.conv_channels[l], cout = a.conv_channels[l + 1];
    const int os = (side - a.kernel) / a.stride + 1;
    const ParamBlock& w = p.block(LayerKind::Conv, static_cast<int>(l), false);
    const ParamBlock& bias = p.block(LayerKind::Conv, static_cast<int>(l), true);
    std::vector<double> out(static_cast<std::size_t>(cout) * os * os);
    for (int o = 0; o < cout; ++o) {
      for (int r = 0; r < os; ++r) {
        for (int c = 0; c < os; ++c) {
          double s = p.values[bias.offset + o];
          for (int i = 0; i < cin; ++i) {
            for (int kh = 0; kh < a.kernel; ++kh) {
              for (int kw = 0; kw < a.kernel; ++kw) {
                s += get(w, o, (i * a.kernel + kh) * a.kernel + kw) *
                     act[(static_cast<std::size_t>(i) * side + a.stride * r + kh) * side + a.stride * c + kw];
              }
            }
          }
          out[(static_cast<std::size_t>(o) * os + r) * os + c] = std::max(0.0, s);
        }
      }
    }
    act = std::move(out);
    side = os;
  }
  const auto mlp = [&](std::vector<double> h, LayerKind kind, const std::vector<int>& widths, bool relu) {
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      const ParamBlock& w = p.block(kind, static_cast<int>(l), false);
      const ParamBlock& b = p.block(kind, static_cast<int>(l), true);
      std::vector<double> z(widths[l + 1]);
      for (int o = 0; o < widths[l + 1]; ++o) {
        double s = p.values[b.offset + o];
        for (int i = 0; i < widths[l]; ++i) s += get(w, o, i) * h[i];
        z[o] = l + 2 < widths.size() ? (relu ? std::max(0.0, s) : std::tanh(s)) : s;
      }
      h = std::move(z);
    }
    return h;
  };
  const std::vector<double> br = mlp(act, LayerKind::Branch, a.branch_widths, true);
  const ParamBlock& merge = p.block(LayerKind::MergeBias, 0, true);
  std::vector<double> out;
  for (const Point& pt : coords) {
    const std::vector<double> tr = mlp({pt.x, pt.y}, LayerKind::Trunk, a.trunk_widths, false);
    for (int c = 0; c < a.n_out; ++c) {
      double s = p.values[merge.offset + c];
      for (int j = 0; j < a.p(); ++j) s += br[c * a.p() + j] * tr[c * a.p() + j];
      out.push_back(s);
    }
  }
  return out;
}

double loss_at(const DeepONetParams& p, const BranchInputs& x, const std::vector<Point>& c, const DenseMatrix& t) {
  return loss_rel_mse(forward(p, x, c), t);
}

// Central differences at h and h/10; indices where the two disagree sit on
// a ReLU kink and are skipped. Returns the number of indices compared.
int fd_check(const DeepONetParams& params, const BranchInputs& x, const std::vector<Point>& coords,
             const DenseMatrix& targets, const std::vector<std::size_t>& indices, double tol) {
  std::vector<double> grad(params.size(), 0.0);
  loss_and_gradient(params, x, coords, targets, grad);
  int compared = 0;
  for (std::size_t i : indices) {
    const auto central = [&](double h) {
      DeepONetParams p = params;
      p.values[i] += h;
      const double up = loss_at(p, x, coords, targets);
      p.values[i] -= 2 * h;
      const double down = loss_at(p, x, coords, targets);
      return (up - down) / (2 * h);
    };
    const double fd = central(1e-5);
    const double fd_fine = central(1e-6);
    const double scale = std::max({std::abs(fd), std::abs(grad[i]), 1e-8});
    if (std::abs(fd - fd_fine) > 1e-6 * scale + 1e-12) continue;  // kink
    EXPECT_LE(std::abs(fd - grad[i]), tol * scale + 1e-11) << "param " << i;
    ++compared;
  }
  return compared;
}

}  // namespace

TEST(Arch, PaperShapes) {
  const Arch d = Arch::darcy();
  EXPECT_NO_THROW(d.validate());
  EXPECT_EQ(d.spatial_sizes(), (std::vector<int>{31, 15, 7, 3, 1}));
  EXPECT_EQ(d.flattened_size(), 180);
  EXPECT_EQ(d.p(), 80);
  const Arch e = Arch::elasticity();
  EXPECT_EQ(e.flattened_size(), 256);
  EXPECT_EQ(e.width(), 160);
  EXPECT_EQ(e.p(), 80);
  Arch bad = d;
  bad.branch_widths.front() = 100;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_EQ(arch_from_json(arch_to_json(e)), e);
}

TEST(Init, DeterministicAndZeroBiases) {
  const DeepONetParams a = init_params(Arch::darcy(), 3), b = init_params(Arch::darcy(), 3);
  EXPECT_EQ(a.values, b.values);
  EXPECT_NE(a.values, init_params(Arch::darcy(), 4).values);
  for (const auto& blk : a.blocks) {
    if (!blk.is_bias) continue;
    for (std::size_t i = 0; i < blk.size(); ++i) EXPECT_EQ(a.values[blk.offset + i], 0.0);
  }
}

TEST(Init, XavierBounds) {
  const DeepONetParams p = init_params(Arch::darcy(), 1);
  const auto& w = p.block(LayerKind::Branch, 0, false);
  const double bound = std::sqrt(6.0 / (w.rows + w.cols));
  double max_abs = 0;
  for (std::size_t i = 0; i < w.size(); ++i) max_abs = std::max(max_abs, std::abs(p.values[w.offset + i]));
  EXPECT_LE(max_abs, bound);
  EXPECT_GT(max_abs, 0.9 * bound);
}

TEST(Forward, MatchesLoopOracle) {
  for (int n_out : {1, 2}) {
    const DeepONetParams p = randomized(tiny_arch(n_out), 10 + n_out);
    const BranchInputs x = random_inputs(3, 20);
    const auto coords = random_coords(5, 30);
    const DenseMatrix out = forward(p, x, coords);
    for (int s = 0; s < 3; ++s) {
      const auto ref = reference_forward(p, x, s, coords);
      for (std::size_t j = 0; j < ref.size(); ++j) EXPECT_NEAR(out(s, j), ref[j], 1e-12);
    }
  }
}

TEST(Forward, DarcyArchMatchesLoopOracleAcrossChunks) {
  const DeepONetParams p = randomized(Arch::darcy(), 5);
  const BranchInputs x = random_inputs(19, 6);  // more than one conv chunk
  const auto coords = random_coords(4, 7);
  const DenseMatrix out = forward(p, x, coords);
  for (int s : {0, 17, 18}) {
    const auto ref = reference_forward(p, x, s, coords);
    for (std::size_t j = 0; j < ref.size(); ++j) EXPECT_NEAR(out(s, j), ref[j], 1e-11);
  }
  EXPECT_EQ(forward(p, x, coords), out);  // pure function
  const DenseMatrix single = forward(p, x.middleCols(17, 1), coords);
  for (Eigen::Index j = 0; j < out.cols(); ++j) EXPECT_NEAR(single(0, j), out(17, j), 1e-13);
}

TEST(Forward, ZeroBranchGivesMergeBias) {
  DeepONetParams p = init_params(Arch::darcy(), 1);
  for (const auto& b : p.blocks) {
    if (b.kind == LayerKind::Branch) std::fill_n(p.values.begin() + b.offset, b.size(), 0.0);
  }
  p.values[p.block(LayerKind::MergeBias, 0, true).offset] = 0.25;
  const DenseMatrix out = forward(p, random_inputs(2, 1), random_coords(6, 2));
  for (Eigen::Index i = 0; i < out.size(); ++i) EXPECT_EQ(out.data()[i], 0.25);
}

TEST(Forward, LastBranchLayerScalesOutput) {
  DeepONetParams p = randomized(tiny_arch(1), 2);
  const BranchInputs x = random_inputs(2, 3);
  const auto coords = random_coords(5, 4);
  const double mb = p.values[p.block(LayerKind::MergeBias, 0, true).offset];
  const DenseMatrix base = forward(p, x, coords);
  const int last = static_cast<int>(p.arch.branch_widths.size()) - 2;
  for (bool bias : {false, true}) {
    const auto& b = p.block(LayerKind::Branch, last, bias);
    for (std::size_t i = 0; i < b.size(); ++i) p.values[b.offset + i] *= 3.0;
  }
  const DenseMatrix scaled = forward(p, x, coords);
  for (Eigen::Index i = 0; i < base.size(); ++i) EXPECT_NEAR(scaled.data()[i] - mb, 3 * (base.data()[i] - mb), 1e-12);
}

TEST(Forward, ShapeMismatchIsAnError) {
  const DeepONetParams p = init_params(tiny_arch(1), 1);
  EXPECT_THROW(forward(p, BranchInputs::Zero(100, 2), random_coords(3, 1)), ConfigError);
}

TEST(Forward, TrunkIsContinuousOffGrid) {
  const DeepONetParams p = randomized(Arch::darcy(), 8);
  const BranchInputs x = random_inputs(1, 9);
  double prev_max = INFINITY;
  for (int n : {10, 100, 1000}) {
    std::vector<Point> seg(n + 1);
    for (int i = 0; i <= n; ++i) seg[i] = {0.1 + 0.7 * i / n, 0.3 + 0.2 * i / n};
    const DenseMatrix out = forward(p, x, seg);
    ASSERT_TRUE(out.allFinite());
    double max_delta = 0;
    for (int i = 0; i < n; ++i) max_delta = std::max(max_delta, std::abs(out(0, i + 1) - out(0, i)));
    EXPECT_LT(max_delta, prev_max);
    prev_max = max_delta;
  }
}

TEST(Loss, Definition) {
  const DenseMatrix t = (DenseMatrix(2, 3) << 1, 2, 3, -1, 0, 4).finished();
  EXPECT_EQ(loss_rel_mse(t, t), 0.0);
  EXPECT_NEAR(loss_rel_mse(DenseMatrix::Zero(2, 3), t), 1.0, 1e-10);
  EXPECT_NEAR(loss_rel_mse(2 * t, t), 1.0, 1e-10);
  EXPECT_NEAR(mean_relative_error(2 * t, t), 1.0, 1e-12);
  EXPECT_TRUE(std::isfinite(loss_rel_mse(t, DenseMatrix::Zero(2, 3))));
}

TEST(Gradient, FiniteDifferenceEveryLayerType) {
  for (int n_out : {1, 2}) {
    const DeepONetParams p = randomized(tiny_arch(n_out), 40 + n_out, 0.3);
    const BranchInputs x = random_inputs(3, 41);
    const auto coords = random_coords(6, 42);
    Rng rng(43);
    DenseMatrix t(3, 6 * n_out);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = rng.normal();
    std::vector<std::size_t> idx;
    for (const auto& b : p.blocks) {
      for (int k = 0; k < 4 && k < static_cast<int>(b.size()); ++k) idx.push_back(b.offset + rng.below(b.size()));
    }
    EXPECT_GE(fd_check(p, x, coords, t, idx, 1e-5), static_cast<int>(idx.size()) * 3 / 4);
  }
}

TEST(Gradient, ZeroTargetsStayFinite) {
  const DeepONetParams p = randomized(tiny_arch(1), 5);
  std::vector<double> grad(p.size(), 0.0);
  const double loss = loss_and_gradient(p, random_inputs(2, 1), random_coords(4, 2), DenseMatrix::Zero(2, 4), grad);
  EXPECT_TRUE(std::isfinite(loss));
  for (double g : grad) ASSERT_TRUE(std::isfinite(g));
}

TEST(Gradient, DuplicatedBatchGivesSameGradient) {
  const DeepONetParams p = randomized(tiny_arch(1), 6);
  const BranchInputs x = random_inputs(2, 1);
  const auto c = random_coords(4, 2);
  Rng rng(3);
  DenseMatrix t(2, 4);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = rng.normal();
  BranchInputs x2(x.rows(), 4);
  x2 << x, x;
  DenseMatrix t2(4, 4);
  t2 << t, t;
  std::vector<double> g1(p.size(), 0.0), g2(p.size(), 0.0);
  loss_and_gradient(p, x, c, t, g1);
  loss_and_gradient(p, x2, c, t2, g2);
  for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_NEAR(g1[i], g2[i], 1e-13 * (1 + std::abs(g1[i])));
}

TEST(Adam, ZeroGradientAndFirstStep) {
  std::vector<double> v{1.0, -2.0, 3.0};
  AdamState s = AdamState::zeros(3);
  adam_step(v, std::vector<double>{0, 0, 0}, s, {});
  EXPECT_EQ(v, (std::vector<double>{1.0, -2.0, 3.0}));
  AdamState s2 = AdamState::zeros(3);
  adam_step(v, std::vector<double>{0.5, -4.0, 1e-3}, s2, {});
  EXPECT_NEAR(v[0], 1.0 - 1e-3, 1e-8);
  EXPECT_NEAR(v[1], -2.0 + 1e-3, 1e-8);
  EXPECT_NEAR(v[2], 3.0 - 1e-3, 1e-7);
}

TEST(Adam, MaskKeepsFrozenEntries) {
  std::vector<double> v{1.0, 2.0};
  AdamState s = AdamState::zeros(2);
  const std::vector<bool> mask{false, true};
  adam_step(v, std::vector<double>{1.0, 1.0}, s, {}, &mask);
  EXPECT_EQ(v[0], 1.0);
  EXPECT_EQ(s.m[0], 0.0);
  EXPECT_NE(v[1], 2.0);
}

namespace {

OperatorDataset toy_dataset(int n, std::uint64_t seed) {
  OperatorDataset d;
  d.inputs = random_inputs(n, seed);
  d.coords = random_coords(8, seed + 1);
  d.targets.resize(n, 8);
  for (int s = 0; s < n; ++s) {
    const double a = d.inputs.col(s).head(961).mean(), b = d.inputs.col(s).tail(961).mean();
    for (int q = 0; q < 8; ++q) d.targets(s, q) = 1 + a * d.coords[q].x + b * d.coords[q].y;
  }
  return d;
}

}  // namespace

TEST(Train, SmokeLossDropsAndIsDeterministic) {
  const OperatorDataset d = toy_dataset(10, 1);
  TrainConfig cfg;
  cfg.epochs = 500;
  cfg.batch_size = 10;
  cfg.eval_interval = 50;
  const TrainResult r = train(d, d, tiny_arch(1), cfg);
  ASSERT_EQ(r.history.train_loss.size(), 500u);
  EXPECT_LE(r.history.train_loss.back(), r.history.train_loss.front() / 10);
  int non_increasing = 0;
  for (std::size_t i = 1; i < 500; ++i) non_increasing += r.history.train_loss[i] <= r.history.train_loss[i - 1];
  EXPECT_GE(non_increasing, 0.9 * 499);
  const TrainResult again = train(d, d, tiny_arch(1), cfg);
  EXPECT_EQ(again.history.train_loss, r.history.train_loss);
  EXPECT_EQ(again.best.values, r.best.values);
}

TEST(Train, ResumeMatchesUninterruptedRun) {
  const OperatorDataset d = toy_dataset(12, 2);
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.batch_size = 5;
  const TrainResult full = train(d, d, tiny_arch(1), cfg);
  TrainConfig first = cfg;
  first.epochs = 3;
  const TrainResult part = train(d, d, tiny_arch(1), first);
  const TrainResult rest = train(d, d, tiny_arch(1), cfg, &part.last);
  ASSERT_EQ(rest.history.train_loss.size(), 3u);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(rest.history.train_loss[i], full.history.train_loss[3 + i], 1e-10);
  EXPECT_EQ(rest.last.params.values, full.last.params.values);
}

TEST(Train, RejectsBadConfig) {
  const OperatorDataset d = toy_dataset(4, 3);
  TrainConfig cfg;
  cfg.batch_size = 5;
  EXPECT_THROW(train(d, d, tiny_arch(1), cfg), ConfigError);
  cfg.batch_size = 2;
  cfg.epochs = 1;
  OperatorDataset bad = d;
  bad.targets(1, 1) = std::nan("");
  EXPECT_THROW(train(bad, d, tiny_arch(1), cfg), NumericalError);
}
