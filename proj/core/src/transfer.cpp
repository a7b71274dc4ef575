#include "hints/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "hints/error.hpp"
#include "hints/rng.hpp"

namespace hints {

namespace {

constexpr std::uint64_t kBatchStream = 0x7e7e;

DenseMatrix sq_dists(const DenseMatrix& a, const DenseMatrix& b) {
  const Eigen::VectorXd na = a.rowwise().squaredNorm();
  const Eigen::VectorXd nb = b.rowwise().squaredNorm();
  DenseMatrix d = -2.0 * a * b.transpose();
  d.colwise() += na;
  d.rowwise() += nb.transpose();
  return d.cwiseMax(0.0);
}

DenseMatrix gauss(const DenseMatrix& a, const DenseMatrix& b, double gamma) {
  return (-gamma * sq_dists(a, b)).array().exp().matrix();
}

// Same kernel with exact zeros on the diagonal distances.
DenseMatrix gauss_self(const DenseMatrix& a, double gamma) {
  DenseMatrix d = sq_dists(a, a);
  d.diagonal().setZero();
  d = 0.5 * (d + d.transpose());
  return (-gamma * d).array().exp().matrix();
}

DenseMatrix regularized_inverse(const DenseMatrix& k, double ridge) {
  DenseMatrix m = k;
  m.diagonal().array() += ridge;
  Eigen::SelfAdjointEigenSolver<DenseMatrix> es(m);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / lo > 1e12) {
    throw NumericalError("ceod_loss: kernel matrix is ill-conditioned (condition estimate " +
                         std::to_string(lo > 0.0 ? hi / lo : INFINITY) + ")");
  }
  return es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
}

std::vector<int> draw_batch(int n, int size, std::uint64_t seed) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (size >= n) return idx;
  Rng rng(seed);
  rng.shuffle(std::span<int>(idx));
  idx.resize(size);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

void FineTuneConfig::validate() const {
  if (iterations < 0) throw ConfigError("finetune: iterations must be >= 0");
  if (!(learning_rate > 0.0)) throw ConfigError("finetune: learning_rate must be positive");
  if (!(lambda1 > 0.0)) throw ConfigError("finetune: lambda1 must be positive");
  if (lambda2 != 0.0 && !(lambda2 >= lambda1)) throw ConfigError("finetune: lambda2 must be 0 or >= lambda1");
  if (!(ridge > 0.0)) throw ConfigError("finetune: ridge must be positive");
  if (gamma_x && !(*gamma_x > 0.0)) throw ConfigError("finetune: gamma_x must be positive");
  if (gamma_y && !(*gamma_y > 0.0)) throw ConfigError("finetune: gamma_y must be positive");
  if (batch_size < 1) throw ConfigError("finetune: batch_size must be >= 1");
}

std::vector<bool> freeze_mask(const DeepONetParams& params) {
  std::vector<bool> mask(params.size(), false);
  const int last_trunk = static_cast<int>(params.arch.trunk_widths.size()) - 2;
  for (const auto& b : params.blocks) {
    const bool trainable = b.kind == LayerKind::Branch || b.kind == LayerKind::MergeBias ||
                           (b.kind == LayerKind::Trunk && b.layer == last_trunk);
    if (!trainable) continue;
    std::fill(mask.begin() + static_cast<std::ptrdiff_t>(b.offset),
              mask.begin() + static_cast<std::ptrdiff_t>(b.offset + b.size()), true);
  }
  return mask;
}

double median_bandwidth(const DenseMatrix& rows) {
  const auto n = rows.rows();
  if (n < 2) return 1.0;
  const DenseMatrix d2 = sq_dists(rows, rows);
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index j = 1; j < n; ++j) {
    for (Eigen::Index i = 0; i < j; ++i) d.push_back(std::sqrt(d2(i, j)));
  }
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  double med = *mid;
  if (d.size() % 2 == 0) med = 0.5 * (med + *std::max_element(d.begin(), mid));
  if (!(med > 0.0)) return 1.0;
  return 1.0 / (2.0 * med * med);
}

std::vector<Point> ceod_query_points() {
  std::vector<Point> pts;
  for (int j = 0; j < 8; ++j) {
    for (int i = 0; i < 8; ++i) pts.push_back({(i + 0.5) / 8.0, (j + 0.5) / 8.0});
  }
  return pts;
}

CeodValue ceod_loss(const DenseMatrix& xs, const DenseMatrix& ys, const DenseMatrix& xt, const DenseMatrix& yt,
                    double gamma_x, double gamma_y, double ridge, bool with_gradient) {
  if (xs.rows() != ys.rows() || xt.rows() != yt.rows()) throw ConfigError("ceod_loss: X and Y row counts differ");
  if (xs.cols() != xt.cols() || ys.cols() != yt.cols()) throw ConfigError("ceod_loss: feature widths differ");
  if (xs.rows() < 1 || xt.rows() < 1) throw ConfigError("ceod_loss: empty batch");

  const DenseMatrix kx_ss = gauss_self(xs, gamma_x);
  const DenseMatrix kx_tt = gauss_self(xt, gamma_x);
  const DenseMatrix kx_st = gauss(xs, xt, gamma_x);
  const DenseMatrix ky_ss = gauss_self(ys, gamma_y);
  const DenseMatrix ky_tt = gauss_self(yt, gamma_y);
  const DenseMatrix ky_st = gauss(ys, yt, gamma_y);
  const DenseMatrix a_s = regularized_inverse(kx_ss, ridge);
  const DenseMatrix a_t = regularized_inverse(kx_tt, ridge);

  // Tr[A Ky A Kx] = sum(Ky .* (A Kx A)) since every factor is symmetric.
  const DenseMatrix g_ss = a_s * kx_ss * a_s;
  const DenseMatrix g_tt = a_t * kx_tt * a_t;
  const DenseMatrix m_st = a_s * kx_st * a_t;  // Tr[A_s Ky_st A_t Kx_ts] = sum(Ky_st .* m_st)
  CeodValue out;
  out.loss = ky_ss.cwiseProduct(g_ss).sum() - 2.0 * ky_st.cwiseProduct(m_st).sum() + ky_tt.cwiseProduct(g_tt).sum();
  if (!with_gradient) return out;

  // d/dy_tk of sum(Ky_tt .* G_tt) = -4 gamma sum_j G[k,j] K[k,j] (y_k - y_j)
  const DenseMatrix w_tt = g_tt.cwiseProduct(ky_tt);
  DenseMatrix grad = -4.0 * gamma_y * (w_tt.rowwise().sum().asDiagonal() * yt - w_tt * yt);
  // d/dy_tk of -2 sum(Ky_st .* M) = -4 gamma sum_i M[i,k] K[i,k] (y_tk - y_si)
  const DenseMatrix w_st = m_st.cwiseProduct(ky_st);
  grad += 4.0 * gamma_y * (w_st.colwise().sum().transpose().asDiagonal() * yt - w_st.transpose() * ys);
  out.grad_yt = std::move(grad);
  return out;
}

FineTuneResult fine_tune(const DeepONetParams& source, const OperatorDataset& target,
                         const OperatorDataset& source_subset, const FineTuneConfig& config,
                         const FineTuneCallback& on_iteration) {
  config.validate();
  if (target.size() < 1) throw ConfigError("finetune: empty target dataset");
  const bool use_ceod = config.lambda2 != 0.0;
  if (use_ceod && source_subset.size() < 1) throw ConfigError("finetune: CEOD needs source samples");

  FineTuneResult result{source, {}};
  DeepONetParams& params = result.params;
  const std::vector<bool> mask = freeze_mask(params);
  AdamState adam = AdamState::zeros(params.size());
  AdamConfig adam_cfg;
  adam_cfg.learning_rate = config.learning_rate;
  double lambda2 = config.lambda2;

  const std::vector<Point> query = ceod_query_points();
  const DenseMatrix source_trunk = use_ceod ? trunk_forward(source, query) : DenseMatrix();
  std::optional<double> gamma_x = config.gamma_x, gamma_y = config.gamma_y;

  std::vector<double> grad(params.size());
  for (int it = 0; it < config.iterations; ++it) {
    const auto t_idx = draw_batch(target.size(), config.batch_size, derive_seed(config.seed, kBatchStream, 2 * it));
    const OperatorDataset tb = target.subset(t_idx);
    std::fill(grad.begin(), grad.end(), 0.0);

    // Regression term, scaled by lambda1 through the prediction gradient.
    ForwardCache cache;
    DenseMatrix b = branch_forward(params, tb.inputs, &cache);
    DenseMatrix t = trunk_forward(params, tb.coords, &cache);
    DenseMatrix pred = combine(params, b, t);
    const double reg = loss_rel_mse(pred, tb.targets);
    backward(params, cache, b, t, config.lambda1 * loss_rel_mse_grad(pred, tb.targets), grad);

    double ceod = 0.0;
    if (use_ceod) {
      const auto s_idx =
          draw_batch(source_subset.size(), config.batch_size, derive_seed(config.seed, kBatchStream, 2 * it + 1));
      const OperatorDataset sb = source_subset.subset(s_idx);
      const DenseMatrix xs = sb.inputs.transpose();
      const DenseMatrix ys = combine(source, branch_forward(source, sb.inputs), source_trunk);
      const DenseMatrix xt = tb.inputs.transpose();
      ForwardCache qc;
      b = branch_forward(params, tb.inputs, &qc);
      t = trunk_forward(params, query, &qc);
      const DenseMatrix yt = combine(params, b, t);
      if (!gamma_x) {
        DenseMatrix both(xs.rows() + xt.rows(), xs.cols());
        both << xs, xt;
        gamma_x = median_bandwidth(both);
      }
      if (!gamma_y) {
        DenseMatrix both(ys.rows() + yt.rows(), ys.cols());
        both << ys, yt;
        gamma_y = median_bandwidth(both);
      }
      const CeodValue cv = ceod_loss(xs, ys, xt, yt, *gamma_x, *gamma_y, config.ridge, true);
      ceod = cv.loss;
      backward(params, qc, b, t, lambda2 * cv.grad_yt, grad);
    }

    const double loss = config.lambda1 * reg + lambda2 * ceod;
    if (!std::isfinite(loss)) {
      throw NumericalError("finetune: non-finite loss at iteration " + std::to_string(it));
    }
    result.history.loss.push_back(loss);
    result.history.regression.push_back(reg);
    result.history.ceod.push_back(ceod);
    result.history.lambda2.push_back(lambda2);
    adam_step(params.values, grad, adam, adam_cfg, &mask);
    if (use_ceod && config.adaptive_lambda2) lambda2 = std::max(config.lambda1, lambda2 + config.lambda2_rate * ceod);
    if (on_iteration) on_iteration(it + 1, loss);
  }
  result.history.gamma_x = gamma_x.value_or(0.0);
  result.history.gamma_y = gamma_y.value_or(0.0);
  return result;
}

}  // namespace hints
