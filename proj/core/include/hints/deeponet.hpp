#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hints/linalg.hpp"
#include "hints/mesh.hpp"

namespace hints {

/// Layer widths of a DeepONet with a strided-convolution branch.
///
/// The branch takes a (conv_channels[0] x input_size x input_size) image,
/// applies valid 3x3 stride-2 convolutions with ReLU, flattens (channel,
/// row, column) and runs a ReLU MLP whose last layer is linear. The trunk is
/// a Tanh MLP on (x, y) whose last layer is linear. Both end in p * n_out
/// features; component c of the output is the dot product of feature group c
/// plus a scalar bias.
struct Arch {
  std::vector<int> conv_channels;
  std::vector<int> branch_widths;  // first entry = flattened conv output size
  std::vector<int> trunk_widths;   // first entry = 2
  int n_out = 1;
  int input_size = 31;
  int kernel = 3;
  int stride = 2;

  static Arch darcy();
  static Arch elasticity();

  int width() const { return branch_widths.back(); }
  int p() const { return width() / n_out; }
  /// Spatial side length after each conv layer (entry 0 = input).
  std::vector<int> spatial_sizes() const;
  int flattened_size() const;
  /// Throws ConfigError unless every shape chains.
  void validate() const;

  friend bool operator==(const Arch&, const Arch&) = default;
};

nlohmann::json arch_to_json(const Arch& arch);
Arch arch_from_json(const nlohmann::json& j);

enum class LayerKind { Conv, Branch, Trunk, MergeBias };

/// One weight or bias tensor inside the flat parameter vector. Conv weights
/// are (out, in, 3, 3) row-major, dense weights (out, in) row-major.
struct ParamBlock {
  LayerKind kind;
  int layer;
  bool is_bias;
  std::size_t offset;
  int rows;
  int cols;
  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
  std::string name() const;
};

std::vector<ParamBlock> param_layout(const Arch& arch);

/// Storage aligned to Eigen's packet size. Eigen peels unaligned heads off
/// vectorised reductions, so with plain malloc alignment the summation order
/// (and the last bits of a result) would depend on where the heap put it.
using AlignedVector = std::vector<double, Eigen::aligned_allocator<double>>;

/// All trainable numbers of a DeepONet in one flat, layer-ordered vector.
struct DeepONetParams {
  Arch arch;
  std::vector<ParamBlock> blocks;
  AlignedVector values;

  static DeepONetParams zeros(const Arch& arch);
  std::size_t size() const { return values.size(); }
  const ParamBlock& block(LayerKind kind, int layer, bool is_bias) const;
};

/// Xavier-uniform weights, zero biases.
DeepONetParams init_params(const Arch& arch, std::uint64_t seed);

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Branch inputs, one sample per column: entry c * S^2 + (row * S + col).
using BranchInputs = DenseMatrix;

/// Activations kept from a forward pass for the backward pass.
struct ForwardCache {
  int batch = 0;
  std::vector<DenseMatrix> conv_act;    // [C_l x batch*H_l*W_l], entry 0 = input
  std::vector<DenseMatrix> branch_act;  // [width x batch], entry 0 = flattened conv output
  std::vector<DenseMatrix> trunk_act;   // [width x Q], entry 0 = coordinates
};

/// Branch features [p*n_out x batch].
DenseMatrix branch_forward(const DeepONetParams& params, const BranchInputs& inputs,
                           ForwardCache* cache = nullptr);
/// Trunk features [p*n_out x Q].
DenseMatrix trunk_forward(const DeepONetParams& params, std::span<const Point> coords,
                          ForwardCache* cache = nullptr);
/// Merges features into predictions [batch x Q*n_out], interleaved per point.
DenseMatrix combine(const DeepONetParams& params, const DenseMatrix& branch, const DenseMatrix& trunk);

DenseMatrix forward(const DeepONetParams& params, const BranchInputs& inputs, std::span<const Point> coords);

/// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(prediction)
/// [batch x Q*n_out]. The cache must come from branch_forward and
/// trunk_forward with cache enabled.
void backward(const DeepONetParams& params, const ForwardCache& cache, const DenseMatrix& branch,
              const DenseMatrix& trunk, const DenseMatrix& d_pred, std::span<double> grad);

/// Mean over samples of ||pred - target||^2 / (||target||^2 + 1e-12); rows are samples.
double loss_rel_mse(const DenseMatrix& pred, const DenseMatrix& target);
/// Gradient of loss_rel_mse with respect to pred.
DenseMatrix loss_rel_mse_grad(const DenseMatrix& pred, const DenseMatrix& target);
/// Mean over samples of ||pred - target|| / ||target||.
double mean_relative_error(const DenseMatrix& pred, const DenseMatrix& target);

/// loss_rel_mse over the batch and its exact parameter gradient.
double loss_and_gradient(const DeepONetParams& params, const BranchInputs& inputs,
                         std::span<const Point> coords, const DenseMatrix& targets, std::span<double> grad);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;

  static AdamState zeros(std::size_t n) { return {std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), 0}; }
};

/// One bias-corrected Adam update. Entries with mask[i] == false keep their
/// value and moments untouched.
void adam_step(std::span<double> params, std::span<const double> grad, AdamState& state, const AdamConfig& config,
               const std::vector<bool>* mask = nullptr);

/// Supervised samples sharing one set of query points.
struct OperatorDataset {
  BranchInputs inputs;    // [2*S^2 x N]
  DenseMatrix targets;    // [N x Q*n_out]
  std::vector<Point> coords;

  int size() const { return static_cast<int>(inputs.cols()); }
  OperatorDataset subset(std::span<const int> indices) const;
};

struct TrainConfig {
  AdamConfig adam;
  int epochs = 3000;
  int batch_size = 256;
  std::uint64_t seed = 0;
  int eval_interval = 10;
  /// Step decay: the learning rate is multiplied by lr_decay_factor every
  /// lr_decay_every epochs. 0 keeps it fixed.
  int lr_decay_every = 0;
  double lr_decay_factor = 0.5;

  double learning_rate_at(int epoch) const;
};

struct TrainHistory {
  std::vector<double> train_loss;           // one per epoch (batch-averaged rel MSE)
  std::vector<int> eval_epochs;
  std::vector<double> test_error;           // mean relative L2 error per eval
  int best_epoch = -1;
  double best_test_error = 0.0;
};

/// Resumable optimizer state.
struct TrainState {
  DeepONetParams params;
  AdamState adam;
  int epoch = 0;  // epochs completed
};

struct TrainResult {
  DeepONetParams best;
  TrainState last;
  TrainHistory history;
};

using EpochCallback = std::function<void(int epoch, double train_loss, std::optional<double> test_error)>;

/// Mini-batch Adam with a per-epoch shuffle drawn from (seed, epoch). Returns
/// the parameters with the lowest test error seen. Throws NumericalError if
/// the loss becomes non-finite.
TrainResult train(const OperatorDataset& train_set, const OperatorDataset& test_set, const Arch& arch,
                  const TrainConfig& config, const TrainState* resume = nullptr,
                  const EpochCallback& on_epoch = {});

}  // namespace hints
