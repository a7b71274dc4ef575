#include "hints/deeponet.hpp"

#include <cmath>
#include <cstring>
#include <numeric>

#include "hints/error.hpp"
#include "hints/rng.hpp"

namespace hints {

namespace {

constexpr std::uint64_t kInitStream = 0x1717;
constexpr std::uint64_t kShuffleStream = 0x5a5a;

using ConstRowMap = Eigen::Map<const RowMatrix>;
using RowMap = Eigen::Map<RowMatrix>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;

ConstRowMap weight_of(const DeepONetParams& p, const ParamBlock& b) {
  return ConstRowMap(p.values.data() + b.offset, b.rows, b.cols);
}
ConstVecMap bias_of(const DeepONetParams& p, const ParamBlock& b) {
  return ConstVecMap(p.values.data() + b.offset, static_cast<Eigen::Index>(b.size()));
}

// Samples per chunk of the conv stack. Chunking keeps the im2col buffers
// cache-resident; the value is fixed so results do not depend on the batch.
constexpr int kConvChunk = 16;

// im2col for a valid convolution. Activations are channels-last (one pixel
// per column, pixels ordered sample, row, col); column rows are ordered
// (kh, kw, channel) so every copy is one contiguous channel run.
void im2col(const double* src, int channels, int batch, int side, int out_side, int kernel, int stride,
            DenseMatrix& col) {
  col.resize(static_cast<Eigen::Index>(channels) * kernel * kernel,
             static_cast<Eigen::Index>(batch) * out_side * out_side);
  const std::size_t run = sizeof(double) * channels * kernel;
  for (int b = 0; b < batch; ++b) {
    for (int oh = 0; oh < out_side; ++oh) {
      for (int ow = 0; ow < out_side; ++ow) {
        const Eigen::Index j = (static_cast<Eigen::Index>(b) * out_side + oh) * out_side + ow;
        double* dst = col.col(j).data();
        for (int kh = 0; kh < kernel; ++kh) {
          const Eigen::Index pix = (static_cast<Eigen::Index>(b) * side + stride * oh + kh) * side + stride * ow;
          std::memcpy(dst + kh * kernel * channels, src + pix * channels, run);
        }
      }
    }
  }
}

void col2im(const DenseMatrix& col, int channels, int batch, int side, int out_side, int kernel, int stride,
            DenseMatrix& dx) {
  dx.setZero(channels, static_cast<Eigen::Index>(batch) * side * side);
  double* dst = dx.data();
  const Eigen::Index run = static_cast<Eigen::Index>(channels) * kernel;
  for (int b = 0; b < batch; ++b) {
    for (int oh = 0; oh < out_side; ++oh) {
      for (int ow = 0; ow < out_side; ++ow) {
        const Eigen::Index j = (static_cast<Eigen::Index>(b) * out_side + oh) * out_side + ow;
        const double* s = col.col(j).data();
        for (int kh = 0; kh < kernel; ++kh) {
          const Eigen::Index pix = (static_cast<Eigen::Index>(b) * side + stride * oh + kh) * side + stride * ow;
          Eigen::Map<Eigen::VectorXd>(dst + pix * channels, run) += Eigen::Map<const Eigen::VectorXd>(s + kh * run, run);
        }
      }
    }
  }
}

// Stored conv weights are (out, in, kh, kw); the GEMM wants (out, kh, kw, in).
RowMatrix to_gemm_layout(ConstRowMap w, int in, int k2) {
  RowMatrix out(w.rows(), w.cols());
  for (Eigen::Index o = 0; o < w.rows(); ++o) {
    for (int c = 0; c < in; ++c) {
      for (int k = 0; k < k2; ++k) out(o, k * in + c) = w(o, c * k2 + k);
    }
  }
  return out;
}

void add_from_gemm_layout(const RowMatrix& g, int in, int k2, RowMap out) {
  for (Eigen::Index o = 0; o < g.rows(); ++o) {
    for (int c = 0; c < in; ++c) {
      for (int k = 0; k < k2; ++k) out(o, c * k2 + k) += g(o, k * in + c);
    }
  }
}

// Conv activations [C x batch*S] -> dense features [C*S x batch].
DenseMatrix flatten(const DenseMatrix& act, int batch) {
  const Eigen::Index channels = act.rows();
  const Eigen::Index spatial = act.cols() / batch;
  if (spatial == 1) return act;
  DenseMatrix f(channels * spatial, batch);
  for (int b = 0; b < batch; ++b) {
    for (Eigen::Index c = 0; c < channels; ++c) {
      for (Eigen::Index s = 0; s < spatial; ++s) f(c * spatial + s, b) = act(c, b * spatial + s);
    }
  }
  return f;
}

DenseMatrix unflatten(const DenseMatrix& f, Eigen::Index channels, int batch) {
  const Eigen::Index spatial = f.rows() / channels;
  if (spatial == 1) return f;
  DenseMatrix act(channels, batch * spatial);
  for (int b = 0; b < batch; ++b) {
    for (Eigen::Index c = 0; c < channels; ++c) {
      for (Eigen::Index s = 0; s < spatial; ++s) act(c, b * spatial + s) = f(c * spatial + s, b);
    }
  }
  return act;
}

// Branch inputs (one sample per column) -> conv layout [C x batch*S*S].
DenseMatrix to_conv_layout(const BranchInputs& inputs, int channels, int side) {
  const int batch = static_cast<int>(inputs.cols());
  const Eigen::Index pixels = static_cast<Eigen::Index>(side) * side;
  if (inputs.rows() != channels * pixels) throw ConfigError("branch input size does not match the architecture");
  DenseMatrix x(channels, batch * pixels);
  for (int b = 0; b < batch; ++b) {
    for (int c = 0; c < channels; ++c) {
      for (Eigen::Index p = 0; p < pixels; ++p) x(c, b * pixels + p) = inputs(c * pixels + p, b);
    }
  }
  return x;
}

}  // namespace

Arch Arch::darcy() { return {{2, 40, 60, 100, 180}, {180, 80, 80}, {2, 80, 80, 80}, 1}; }

Arch Arch::elasticity() { return {{2, 40, 60, 100, 256}, {256, 160}, {2, 128, 128, 160}, 2}; }

std::vector<int> Arch::spatial_sizes() const {
  std::vector<int> sizes{input_size};
  for (std::size_t l = 1; l < conv_channels.size(); ++l) {
    const int s = sizes.back();
    sizes.push_back(s < kernel ? 0 : (s - kernel) / stride + 1);
  }
  return sizes;
}

int Arch::flattened_size() const {
  const int s = spatial_sizes().back();
  return conv_channels.back() * s * s;
}

void Arch::validate() const {
  if (conv_channels.size() < 2) throw ConfigError("arch: need at least one conv layer");
  if (branch_widths.size() < 2 || trunk_widths.size() < 2) throw ConfigError("arch: MLPs need >= 2 widths");
  for (int c : conv_channels) {
    if (c <= 0) throw ConfigError("arch: channel counts must be positive");
  }
  if (kernel <= 0 || stride <= 0 || input_size <= 0) throw ConfigError("arch: bad conv geometry");
  if (spatial_sizes().back() < 1) throw ConfigError("arch: conv stack shrinks the input below 1x1");
  if (flattened_size() != branch_widths.front()) {
    throw ConfigError("arch: flattened conv output " + std::to_string(flattened_size()) +
                      " does not match branch input width " + std::to_string(branch_widths.front()));
  }
  if (trunk_widths.front() != 2) throw ConfigError("arch: trunk input width must be 2");
  if (branch_widths.back() != trunk_widths.back()) throw ConfigError("arch: branch and trunk widths differ");
  if (n_out < 1 || width() % n_out != 0) throw ConfigError("arch: output width not divisible by n_out");
  for (int w : branch_widths) {
    if (w <= 0) throw ConfigError("arch: widths must be positive");
  }
  for (int w : trunk_widths) {
    if (w <= 0) throw ConfigError("arch: widths must be positive");
  }
}

nlohmann::json arch_to_json(const Arch& a) {
  return {{"conv_channels", a.conv_channels}, {"branch_widths", a.branch_widths}, {"trunk_widths", a.trunk_widths},
          {"n_out", a.n_out},                 {"input_size", a.input_size},       {"kernel", a.kernel},
          {"stride", a.stride}};
}

Arch arch_from_json(const nlohmann::json& j) {
  Arch a;
  a.conv_channels = j.at("conv_channels").get<std::vector<int>>();
  a.branch_widths = j.at("branch_widths").get<std::vector<int>>();
  a.trunk_widths = j.at("trunk_widths").get<std::vector<int>>();
  a.n_out = j.at("n_out").get<int>();
  a.input_size = j.value("input_size", 31);
  a.kernel = j.value("kernel", 3);
  a.stride = j.value("stride", 2);
  a.validate();
  return a;
}

std::string ParamBlock::name() const {
  const char* k = kind == LayerKind::Conv ? "conv" : kind == LayerKind::Branch ? "branch" : kind == LayerKind::Trunk ? "trunk" : "merge";
  if (kind == LayerKind::MergeBias) return "merge.bias";
  return std::string(k) + "." + std::to_string(layer) + (is_bias ? ".bias" : ".weight");
}

std::vector<ParamBlock> param_layout(const Arch& arch) {
  arch.validate();
  std::vector<ParamBlock> blocks;
  std::size_t offset = 0;
  auto add = [&](LayerKind kind, int layer, bool bias, int rows, int cols) {
    blocks.push_back({kind, layer, bias, offset, rows, cols});
    offset += blocks.back().size();
  };
  const int k2 = arch.kernel * arch.kernel;
  for (std::size_t l = 0; l + 1 < arch.conv_channels.size(); ++l) {
    add(LayerKind::Conv, static_cast<int>(l), false, arch.conv_channels[l + 1], arch.conv_channels[l] * k2);
    add(LayerKind::Conv, static_cast<int>(l), true, arch.conv_channels[l + 1], 1);
  }
  for (std::size_t l = 0; l + 1 < arch.branch_widths.size(); ++l) {
    add(LayerKind::Branch, static_cast<int>(l), false, arch.branch_widths[l + 1], arch.branch_widths[l]);
    add(LayerKind::Branch, static_cast<int>(l), true, arch.branch_widths[l + 1], 1);
  }
  for (std::size_t l = 0; l + 1 < arch.trunk_widths.size(); ++l) {
    add(LayerKind::Trunk, static_cast<int>(l), false, arch.trunk_widths[l + 1], arch.trunk_widths[l]);
    add(LayerKind::Trunk, static_cast<int>(l), true, arch.trunk_widths[l + 1], 1);
  }
  add(LayerKind::MergeBias, 0, true, arch.n_out, 1);
  return blocks;
}

DeepONetParams DeepONetParams::zeros(const Arch& arch) {
  DeepONetParams p;
  p.arch = arch;
  p.blocks = param_layout(arch);
  const auto& last = p.blocks.back();
  p.values.assign(last.offset + last.size(), 0.0);
  return p;
}

const ParamBlock& DeepONetParams::block(LayerKind kind, int layer, bool is_bias) const {
  for (const auto& b : blocks) {
    if (b.kind == kind && (kind == LayerKind::MergeBias || b.layer == layer) && b.is_bias == is_bias) return b;
  }
  throw ConfigError("DeepONetParams: no such parameter block");
}

DeepONetParams init_params(const Arch& arch, std::uint64_t seed) {
  DeepONetParams p = DeepONetParams::zeros(arch);
  Rng rng(derive_seed(seed, kInitStream));
  const int k2 = arch.kernel * arch.kernel;
  for (const auto& b : p.blocks) {
    if (b.is_bias) continue;
    // Conv fans count the receptive field, as in the usual Xavier convention.
    const double fan_in = b.cols;
    const double fan_out = b.kind == LayerKind::Conv ? static_cast<double>(b.rows) * k2 : b.rows;
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (std::size_t i = 0; i < b.size(); ++i) p.values[b.offset + i] = rng.uniform(-limit, limit);
  }
  return p;
}

DenseMatrix branch_forward(const DeepONetParams& params, const BranchInputs& inputs, ForwardCache* cache) {
  const Arch& arch = params.arch;
  const int batch = static_cast<int>(inputs.cols());
  const auto sizes = arch.spatial_sizes();
  const int n_conv = static_cast<int>(arch.conv_channels.size()) - 1;

  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c.batch = batch;
  c.conv_act.assign(1, to_conv_layout(inputs, arch.conv_channels[0], arch.input_size));
  std::vector<RowMatrix> w;
  for (int l = 0; l < n_conv; ++l) {
    w.push_back(to_gemm_layout(weight_of(params, params.block(LayerKind::Conv, l, false)), arch.conv_channels[l],
                               arch.kernel * arch.kernel));
    c.conv_act.emplace_back(arch.conv_channels[l + 1], static_cast<Eigen::Index>(batch) * sizes[l + 1] * sizes[l + 1]);
  }
  DenseMatrix col;
  for (int b0 = 0; b0 < batch; b0 += kConvChunk) {
    const int nb = std::min(kConvChunk, batch - b0);
    for (int l = 0; l < n_conv; ++l) {
      const Eigen::Index in_px = static_cast<Eigen::Index>(sizes[l]) * sizes[l];
      const Eigen::Index out_px = static_cast<Eigen::Index>(sizes[l + 1]) * sizes[l + 1];
      im2col(c.conv_act[l].col(b0 * in_px).data(), arch.conv_channels[l], nb, sizes[l], sizes[l + 1], arch.kernel,
             arch.stride, col);
      auto out = c.conv_act[l + 1].middleCols(b0 * out_px, nb * out_px);
      out.noalias() = w[l] * col;
      out.colwise() += bias_of(params, params.block(LayerKind::Conv, l, true));
      out = out.cwiseMax(0.0);
    }
  }

  DenseMatrix h = flatten(c.conv_act.back(), batch);
  if (cache) cache->branch_act.assign(1, h);
  const int n_dense = static_cast<int>(arch.branch_widths.size()) - 1;
  for (int l = 0; l < n_dense; ++l) {
    DenseMatrix z(arch.branch_widths[l + 1], batch);
    z.noalias() = weight_of(params, params.block(LayerKind::Branch, l, false)) * h;
    z.colwise() += bias_of(params, params.block(LayerKind::Branch, l, true));
    h = l + 1 < n_dense ? DenseMatrix(z.cwiseMax(0.0)) : z;
    if (cache) cache->branch_act.push_back(h);
  }
  return h;
}

DenseMatrix trunk_forward(const DeepONetParams& params, std::span<const Point> coords, ForwardCache* cache) {
  const Arch& arch = params.arch;
  const auto q = static_cast<Eigen::Index>(coords.size());
  DenseMatrix h(2, q);
  for (Eigen::Index i = 0; i < q; ++i) {
    h(0, i) = coords[i].x;
    h(1, i) = coords[i].y;
  }
  if (cache) cache->trunk_act.assign(1, h);
  const int n_dense = static_cast<int>(arch.trunk_widths.size()) - 1;
  for (int l = 0; l < n_dense; ++l) {
    DenseMatrix z(arch.trunk_widths[l + 1], q);
    z.noalias() = weight_of(params, params.block(LayerKind::Trunk, l, false)) * h;
    z.colwise() += bias_of(params, params.block(LayerKind::Trunk, l, true));
    h = l + 1 < n_dense ? DenseMatrix(z.array().tanh().matrix()) : z;
    if (cache) cache->trunk_act.push_back(h);
  }
  return h;
}

DenseMatrix combine(const DeepONetParams& params, const DenseMatrix& branch, const DenseMatrix& trunk) {
  const int n_out = params.arch.n_out;
  const int p = params.arch.p();
  const auto batch = branch.cols();
  const auto q = trunk.cols();
  const auto merge = bias_of(params, params.block(LayerKind::MergeBias, 0, true));
  DenseMatrix out(batch, q * n_out);
  if (n_out == 1) {
    out.noalias() = branch.transpose() * trunk;
    out.array() += merge[0];
    return out;
  }
  DenseMatrix part(batch, q);
  for (int c = 0; c < n_out; ++c) {
    part.noalias() = branch.middleRows(c * p, p).transpose() * trunk.middleRows(c * p, p);
    for (Eigen::Index k = 0; k < q; ++k) out.col(k * n_out + c) = part.col(k).array() + merge[c];
  }
  return out;
}

DenseMatrix forward(const DeepONetParams& params, const BranchInputs& inputs, std::span<const Point> coords) {
  return combine(params, branch_forward(params, inputs), trunk_forward(params, coords));
}

void backward(const DeepONetParams& params, const ForwardCache& cache, const DenseMatrix& branch,
              const DenseMatrix& trunk, const DenseMatrix& d_pred, std::span<double> grad) {
  const Arch& arch = params.arch;
  if (grad.size() != params.size()) throw ConfigError("backward: gradient buffer size mismatch");
  const int n_out = arch.n_out;
  const int p = arch.p();
  const int batch = cache.batch;
  const auto q = trunk.cols();
  // Accumulate in aligned storage; see AlignedVector.
  AlignedVector acc(grad.size(), 0.0);
  auto grad_weight = [&](const ParamBlock& b) { return RowMap(acc.data() + b.offset, b.rows, b.cols); };
  auto grad_bias = [&](const ParamBlock& b) { return VecMap(acc.data() + b.offset, static_cast<Eigen::Index>(b.size())); };

  // Merge.
  DenseMatrix d_branch(branch.rows(), batch);
  DenseMatrix d_trunk(trunk.rows(), q);
  auto d_merge = grad_bias(params.block(LayerKind::MergeBias, 0, true));
  if (n_out == 1) {
    d_branch.noalias() = trunk * d_pred.transpose();
    d_trunk.noalias() = branch * d_pred;
    d_merge[0] += d_pred.sum();
  } else {
    DenseMatrix part(batch, q);
    for (int c = 0; c < n_out; ++c) {
      for (Eigen::Index k = 0; k < q; ++k) part.col(k) = d_pred.col(k * n_out + c);
      d_branch.middleRows(c * p, p).noalias() = trunk.middleRows(c * p, p) * part.transpose();
      d_trunk.middleRows(c * p, p).noalias() = branch.middleRows(c * p, p) * part;
      d_merge[c] += part.sum();
    }
  }

  // Trunk MLP.
  {
    const int n_dense = static_cast<int>(arch.trunk_widths.size()) - 1;
    DenseMatrix dz = d_trunk;
    for (int l = n_dense - 1; l >= 0; --l) {
      if (l + 1 < n_dense) dz.array() *= 1.0 - cache.trunk_act[l + 1].array().square();
      const auto& wb = params.block(LayerKind::Trunk, l, false);
      grad_weight(wb).noalias() += dz * cache.trunk_act[l].transpose();
      grad_bias(params.block(LayerKind::Trunk, l, true)) += dz.rowwise().sum();
      if (l > 0) dz = weight_of(params, wb).transpose() * dz;
    }
  }

  // Branch MLP.
  const int n_dense = static_cast<int>(arch.branch_widths.size()) - 1;
  DenseMatrix dz = d_branch;
  for (int l = n_dense - 1; l >= 0; --l) {
    if (l + 1 < n_dense) dz.array() *= (cache.branch_act[l + 1].array() > 0.0).cast<double>();
    const auto& wb = params.block(LayerKind::Branch, l, false);
    grad_weight(wb).noalias() += dz * cache.branch_act[l].transpose();
    grad_bias(params.block(LayerKind::Branch, l, true)) += dz.rowwise().sum();
    dz = weight_of(params, wb).transpose() * dz;
  }

  // Conv stack.
  const auto sizes = arch.spatial_sizes();
  const int n_conv = static_cast<int>(arch.conv_channels.size()) - 1;
  DenseMatrix d_last = unflatten(dz, arch.conv_channels.back(), batch);
  d_last.array() *= (cache.conv_act.back().array() > 0.0).cast<double>();
  const int k2 = arch.kernel * arch.kernel;
  std::vector<RowMatrix> w, dw;
  for (int l = 0; l < n_conv; ++l) {
    const auto& wb = params.block(LayerKind::Conv, l, false);
    w.push_back(to_gemm_layout(weight_of(params, wb), arch.conv_channels[l], k2));
    dw.push_back(RowMatrix::Zero(wb.rows, wb.cols));
  }
  DenseMatrix col, dcol, dy, dx;
  for (int b0 = 0; b0 < batch; b0 += kConvChunk) {
    const int nb = std::min(kConvChunk, batch - b0);
    const Eigen::Index last_px = static_cast<Eigen::Index>(sizes[n_conv]) * sizes[n_conv];
    dy = d_last.middleCols(b0 * last_px, nb * last_px);
    for (int l = n_conv - 1; l >= 0; --l) {
      const Eigen::Index in_px = static_cast<Eigen::Index>(sizes[l]) * sizes[l];
      im2col(cache.conv_act[l].col(b0 * in_px).data(), arch.conv_channels[l], nb, sizes[l], sizes[l + 1],
             arch.kernel, arch.stride, col);
      dw[l].noalias() += dy * col.transpose();
      grad_bias(params.block(LayerKind::Conv, l, true)) += dy.rowwise().sum();
      if (l == 0) break;
      dcol.noalias() = w[l].transpose() * dy;
      col2im(dcol, arch.conv_channels[l], nb, sizes[l], sizes[l + 1], arch.kernel, arch.stride, dx);
      dx.array() *= (cache.conv_act[l].middleCols(b0 * in_px, nb * in_px).array() > 0.0).cast<double>();
      std::swap(dy, dx);
    }
  }
  for (int l = 0; l < n_conv; ++l) {
    add_from_gemm_layout(dw[l], arch.conv_channels[l], k2, grad_weight(params.block(LayerKind::Conv, l, false)));
  }
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += acc[i];
}

double loss_rel_mse(const DenseMatrix& pred, const DenseMatrix& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) throw ConfigError("loss: shape mismatch");
  if (pred.rows() == 0) return 0.0;
  const Eigen::VectorXd num = (pred - target).rowwise().squaredNorm();
  const Eigen::VectorXd den = target.rowwise().squaredNorm().array() + 1e-12;
  return (num.array() / den.array()).mean();
}

DenseMatrix loss_rel_mse_grad(const DenseMatrix& pred, const DenseMatrix& target) {
  const Eigen::VectorXd den = target.rowwise().squaredNorm().array() + 1e-12;
  const double batch = static_cast<double>(pred.rows());
  DenseMatrix g = pred - target;
  g.array().colwise() *= (2.0 / batch) / den.array();
  return g;
}

double mean_relative_error(const DenseMatrix& pred, const DenseMatrix& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) throw ConfigError("error: shape mismatch");
  if (pred.rows() == 0) return 0.0;
  const Eigen::VectorXd num = (pred - target).rowwise().norm();
  const Eigen::VectorXd den = target.rowwise().norm().array().max(1e-12);
  return (num.array() / den.array()).mean();
}

double loss_and_gradient(const DeepONetParams& params, const BranchInputs& inputs, std::span<const Point> coords,
                         const DenseMatrix& targets, std::span<double> grad) {
  ForwardCache cache;
  const DenseMatrix b = branch_forward(params, inputs, &cache);
  const DenseMatrix t = trunk_forward(params, coords, &cache);
  const DenseMatrix pred = combine(params, b, t);
  const double loss = loss_rel_mse(pred, targets);
  backward(params, cache, b, t, loss_rel_mse_grad(pred, targets), grad);
  return loss;
}

void adam_step(std::span<double> params, std::span<const double> grad, AdamState& state, const AdamConfig& config,
               const std::vector<bool>* mask) {
  const std::size_t n = params.size();
  if (grad.size() != n || state.m.size() != n || state.v.size() != n) throw ConfigError("adam_step: size mismatch");
  if (mask && mask->size() != n) throw ConfigError("adam_step: mask size mismatch");
  ++state.step;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < n; ++i) {
    if (mask && !(*mask)[i]) continue;
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * grad[i];
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
  }
}

OperatorDataset OperatorDataset::subset(std::span<const int> indices) const {
  OperatorDataset out;
  out.coords = coords;
  out.inputs.resize(inputs.rows(), static_cast<Eigen::Index>(indices.size()));
  out.targets.resize(static_cast<Eigen::Index>(indices.size()), targets.cols());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    out.inputs.col(k) = inputs.col(indices[k]);
    out.targets.row(k) = targets.row(indices[k]);
  }
  return out;
}

double TrainConfig::learning_rate_at(int epoch) const {
  if (lr_decay_every <= 0) return adam.learning_rate;
  return adam.learning_rate * std::pow(lr_decay_factor, epoch / lr_decay_every);
}

TrainResult train(const OperatorDataset& train_set, const OperatorDataset& test_set, const Arch& arch,
                  const TrainConfig& config, const TrainState* resume, const EpochCallback& on_epoch) {
  arch.validate();
  if (!(config.adam.learning_rate > 0.0)) throw ConfigError("train: learning rate must be positive");
  if (config.batch_size < 1 || config.batch_size > train_set.size()) {
    throw ConfigError("train: batch size must lie in [1, dataset size]");
  }
  if (config.eval_interval < 1) throw ConfigError("train: eval_interval must be >= 1");
  if (config.lr_decay_every < 0 || !(config.lr_decay_factor > 0.0 && config.lr_decay_factor <= 1.0)) {
    throw ConfigError("train: lr decay needs every >= 0 and a factor in (0, 1]");
  }

  TrainResult result;
  TrainState& state = result.last;
  if (resume) {
    if (!(resume->params.arch == arch)) throw ConfigError("train: resume checkpoint has a different architecture");
    state = *resume;
  } else {
    state.params = init_params(arch, config.seed);
    state.adam = AdamState::zeros(state.params.size());
    state.epoch = 0;
  }
  result.best = state.params;
  result.history.best_test_error = std::numeric_limits<double>::infinity();

  const int n = train_set.size();
  std::vector<int> order(n);
  std::vector<double> grad(state.params.size());
  for (int epoch = state.epoch; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(config.seed, kShuffleStream, static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(std::span<int>(order));

    AdamConfig adam = config.adam;
    adam.learning_rate = config.learning_rate_at(epoch);
    double loss_sum = 0.0;
    for (int start = 0; start < n; start += config.batch_size) {
      const int stop = std::min(n, start + config.batch_size);
      const OperatorDataset batch = train_set.subset(std::span<const int>(order).subspan(start, stop - start));
      std::fill(grad.begin(), grad.end(), 0.0);
      const double loss = loss_and_gradient(state.params, batch.inputs, batch.coords, batch.targets, grad);
      if (!std::isfinite(loss)) {
        throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch starting at " +
                             std::to_string(start));
      }
      adam_step(state.params.values, grad, state.adam, adam);
      loss_sum += loss * (stop - start);
    }
    const double train_loss = loss_sum / n;
    result.history.train_loss.push_back(train_loss);
    state.epoch = epoch + 1;

    std::optional<double> test_error;
    if (test_set.size() > 0 && ((epoch + 1) % config.eval_interval == 0 || epoch + 1 == config.epochs)) {
      test_error = mean_relative_error(forward(state.params, test_set.inputs, test_set.coords), test_set.targets);
      result.history.eval_epochs.push_back(epoch + 1);
      result.history.test_error.push_back(*test_error);
      if (*test_error < result.history.best_test_error) {
        result.history.best_test_error = *test_error;
        result.history.best_epoch = epoch + 1;
        result.best = state.params;
      }
    }
    if (on_epoch) on_epoch(epoch + 1, train_loss, test_error);
  }
  if (test_set.size() == 0) {
    result.best = state.params;
    result.history.best_epoch = state.epoch;
    result.history.best_test_error = 0.0;
  }
  return result;
}

}  // namespace hints
