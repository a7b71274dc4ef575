#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "hints/deeponet.hpp"

namespace hints {

struct FineTuneConfig {
  int iterations = 1000;
  double learning_rate = 1e-3;
  double lambda1 = 1.0;
  double lambda2 = 10.0;           // 0 disables the CEOD term
  bool adaptive_lambda2 = false;   // gradient ascent on lambda2, floored at lambda1
  double lambda2_rate = 1e-2;
  std::optional<double> gamma_x;   // median heuristic on the first batch when unset
  std::optional<double> gamma_y;
  double ridge = 1e-3;
  int batch_size = 50;             // per side, capped by the data available
  std::uint64_t seed = 0;

  void validate() const;
};

/// true = trainable: every branch FC layer, the last trunk layer and the
/// merge bias. Conv layers and the other trunk layers stay frozen.
std::vector<bool> freeze_mask(const DeepONetParams& params);

/// 1 / (2 median^2) of the pairwise Euclidean distances between rows.
double median_bandwidth(const DenseMatrix& rows);

/// The 8x8 cell-centre grid on which CEOD compares model outputs.
std::vector<Point> ceod_query_points();

struct CeodValue {
  double loss = 0.0;
  DenseMatrix grad_yt;  // d loss / d Y_t, same shape as Y_t (empty unless requested)
};

/// Empirical discrepancy between the conditional embedding operators of
/// (X_s, Y_s) and (X_t, Y_t) with Gaussian kernels exp(-gamma ||a - b||^2)
/// and ridge-regularized inverses A = (K_x + ridge I)^-1:
///   Tr[A_s Ky_ss A_s Kx_ss] - 2 Tr[A_s Ky_st A_t Kx_ts] + Tr[A_t Ky_tt A_t Kx_tt].
/// Rows are samples. Throws NumericalError when a regularized kernel matrix
/// has a condition number above 1e12.
CeodValue ceod_loss(const DenseMatrix& xs, const DenseMatrix& ys, const DenseMatrix& xt, const DenseMatrix& yt,
                    double gamma_x, double gamma_y, double ridge, bool with_gradient = false);

struct FineTuneHistory {
  std::vector<double> loss;        // lambda1 * regression + lambda2 * ceod
  std::vector<double> regression;
  std::vector<double> ceod;
  std::vector<double> lambda2;
  double gamma_x = 0.0;
  double gamma_y = 0.0;
};

struct FineTuneResult {
  DeepONetParams params;
  FineTuneHistory history;
};

using FineTuneCallback = std::function<void(int iteration, double loss)>;

/// Starts from the source parameters and runs masked Adam on
/// lambda1 * rel-MSE(target batch) + lambda2 * CEOD(source batch, target batch).
/// The source side of CEOD uses the frozen source model.
FineTuneResult fine_tune(const DeepONetParams& source, const OperatorDataset& target,
                         const OperatorDataset& source_subset, const FineTuneConfig& config,
                         const FineTuneCallback& on_iteration = {});

}  // namespace hints
