#include "hints/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include "hints/error.hpp"

namespace hints {

CsrMatrix::CsrMatrix(int rows, int cols, std::vector<int> row_offsets, std::vector<int> col_indices,
                     std::vector<double> values)
    : rows_(rows),
      cols_(cols),
      row_offsets_(std::move(row_offsets)),
      col_indices_(std::move(col_indices)),
      values_(std::move(values)) {
  if (rows_ < 0 || cols_ < 0 || row_offsets_.size() != static_cast<std::size_t>(rows_) + 1 ||
      row_offsets_.front() != 0 || col_indices_.size() != values_.size() ||
      row_offsets_.back() != static_cast<int>(values_.size())) {
    throw ConfigError("CsrMatrix: inconsistent array lengths");
  }
  for (int i = 0; i < rows_; ++i) {
    if (row_offsets_[i + 1] < row_offsets_[i]) throw ConfigError("CsrMatrix: row offsets decrease");
    for (int k = row_offsets_[i]; k < row_offsets_[i + 1]; ++k) {
      if (col_indices_[k] < 0 || col_indices_[k] >= cols_) {
        throw ConfigError("CsrMatrix: column index out of range");
      }
      if (k > row_offsets_[i] && col_indices_[k] <= col_indices_[k - 1]) {
        throw ConfigError("CsrMatrix: column indices not strictly increasing");
      }
    }
  }
}

CsrMatrix CsrMatrix::from_triplets(int rows, int cols, std::span<const Triplet> triplets) {
  std::vector<int> order(triplets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return std::pair{triplets[a].row, triplets[a].col} < std::pair{triplets[b].row, triplets[b].col};
  });
  std::vector<int> offsets(static_cast<std::size_t>(rows) + 1, 0);
  std::vector<int> cols_out;
  std::vector<double> vals;
  cols_out.reserve(triplets.size());
  vals.reserve(triplets.size());
  int last_row = -1, last_col = -1;
  for (int idx : order) {
    const Triplet& t = triplets[idx];
    if (t.row < 0 || t.row >= rows || t.col < 0 || t.col >= cols) {
      throw ConfigError("CsrMatrix::from_triplets: index out of range");
    }
    if (t.row == last_row && t.col == last_col) {
      vals.back() += t.value;
      continue;
    }
    cols_out.push_back(t.col);
    vals.push_back(t.value);
    ++offsets[t.row + 1];
    last_row = t.row;
    last_col = t.col;
  }
  std::partial_sum(offsets.begin(), offsets.end(), offsets.begin());
  return CsrMatrix(rows, cols, std::move(offsets), std::move(cols_out), std::move(vals));
}

CsrMatrix CsrMatrix::from_dense(const DenseMatrix& dense, double drop_tol) {
  std::vector<Triplet> t;
  for (int i = 0; i < dense.rows(); ++i) {
    for (int j = 0; j < dense.cols(); ++j) {
      if (std::abs(dense(i, j)) > drop_tol || (i == j && dense(i, j) != 0.0)) {
        t.push_back({i, j, dense(i, j)});
      }
    }
  }
  return from_triplets(static_cast<int>(dense.rows()), static_cast<int>(dense.cols()), t);
}

CsrMatrix CsrMatrix::identity(int n) {
  std::vector<int> offsets(n + 1), cols(n);
  std::iota(offsets.begin(), offsets.end(), 0);
  std::iota(cols.begin(), cols.end(), 0);
  return CsrMatrix(n, n, std::move(offsets), std::move(cols), std::vector<double>(n, 1.0));
}

double CsrMatrix::at(int i, int j) const {
  const auto begin = col_indices_.begin() + row_offsets_[i];
  const auto end = col_indices_.begin() + row_offsets_[i + 1];
  const auto it = std::lower_bound(begin, end, j);
  if (it == end || *it != j) return 0.0;
  return values_[it - col_indices_.begin()];
}

Vector CsrMatrix::diagonal() const {
  Vector d(std::min(rows_, cols_), 0.0);
  for (int i = 0; i < static_cast<int>(d.size()); ++i) d[i] = at(i, i);
  return d;
}

void CsrMatrix::multiply(std::span<const double> x, std::span<double> y) const {
  if (x.size() != static_cast<std::size_t>(cols_) || y.size() != static_cast<std::size_t>(rows_)) {
    throw ConfigError("CsrMatrix::multiply: dimension mismatch");
  }
  for (int i = 0; i < rows_; ++i) {
    double s = 0.0;
    for (int k = row_offsets_[i]; k < row_offsets_[i + 1]; ++k) s += values_[k] * x[col_indices_[k]];
    y[i] = s;
  }
}

Vector CsrMatrix::multiply(std::span<const double> x) const {
  Vector y(rows_);
  multiply(x, y);
  return y;
}

CsrMatrix CsrMatrix::scaled(double alpha) const {
  CsrMatrix out = *this;
  for (double& v : out.values_) v *= alpha;
  return out;
}

DenseMatrix CsrMatrix::to_dense() const {
  DenseMatrix d = DenseMatrix::Zero(rows_, cols_);
  for (int i = 0; i < rows_; ++i) {
    for (int k = row_offsets_[i]; k < row_offsets_[i + 1]; ++k) d(i, col_indices_[k]) = values_[k];
  }
  return d;
}

bool CsrMatrix::is_symmetric(double tol) const {
  if (rows_ != cols_) return false;
  for (int i = 0; i < rows_; ++i) {
    for (int k = row_offsets_[i]; k < row_offsets_[i + 1]; ++k) {
      if (std::abs(values_[k] - at(col_indices_[k], i)) > tol) return false;
    }
  }
  return true;
}

void CsrMatrix::write_matrix_market(std::ostream& os) const {
  os << "%%MatrixMarket matrix coordinate real general\n";
  os << rows_ << ' ' << cols_ << ' ' << nnz() << '\n';
  os.precision(17);
  for (int i = 0; i < rows_; ++i) {
    for (int k = row_offsets_[i]; k < row_offsets_[i + 1]; ++k) {
      os << i + 1 << ' ' << col_indices_[k] + 1 << ' ' << values_[k] << '\n';
    }
  }
}

namespace {
void check_square_system(const CsrMatrix& a, std::size_t nb, std::size_t nu) {
  if (a.rows() != a.cols() || nb != static_cast<std::size_t>(a.rows()) ||
      nu != static_cast<std::size_t>(a.rows())) {
    throw ConfigError("relaxation sweep: dimension mismatch");
  }
}
}  // namespace

void gauss_seidel_sweep(const CsrMatrix& a, std::span<const double> b, std::span<double> u) {
  check_square_system(a, b.size(), u.size());
  const auto offsets = a.row_offsets();
  const auto cols = a.col_indices();
  const auto vals = a.values();
  for (int i = 0; i < a.rows(); ++i) {
    double sum = b[i];
    double diag = 0.0;
    for (int k = offsets[i]; k < offsets[i + 1]; ++k) {
      const int j = cols[k];
      if (j == i) {
        diag = vals[k];
      } else {
        sum -= vals[k] * u[j];
      }
    }
    if (diag == 0.0) throw NumericalError("gauss_seidel_sweep: zero diagonal in row " + std::to_string(i));
    u[i] = sum / diag;
  }
}

void jacobi_sweep(const CsrMatrix& a, std::span<const double> b, std::span<double> u,
                  double omega) {
  check_square_system(a, b.size(), u.size());
  if (omega < 0.0 || omega > 1.0) throw ConfigError("jacobi_sweep: omega must lie in [0, 1]");
  const Vector d = a.diagonal();
  const Vector r = residual(a, b, u);
  for (int i = 0; i < a.rows(); ++i) {
    if (d[i] == 0.0) throw NumericalError("jacobi_sweep: zero diagonal in row " + std::to_string(i));
    u[i] += omega * r[i] / d[i];
  }
}

Vector residual(const CsrMatrix& a, std::span<const double> b, std::span<const double> u) {
  if (b.size() != static_cast<std::size_t>(a.rows())) throw ConfigError("residual: dimension mismatch");
  Vector r = a.multiply(u);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = b[i] - r[i];
  return r;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double energy_norm(const CsrMatrix& a, std::span<const double> v) {
  const Vector av = a.multiply(v);
  return std::sqrt(std::max(0.0, dot(v, av)));
}

Vector dense_solve(const DenseMatrix& a_in, std::span<const double> b) {
  const int n = static_cast<int>(a_in.rows());
  if (a_in.cols() != n || b.size() != static_cast<std::size_t>(n)) {
    throw ConfigError("dense_solve: dimension mismatch");
  }
  DenseMatrix a = a_in;
  Vector x(b.begin(), b.end());
  const double scale = n == 0 ? 0.0 : a.cwiseAbs().rowwise().sum().maxCoeff();
  const double pivot_floor = 1e-14 * scale;
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  for (int k = 0; k < n; ++k) {
    int p = k;
    a.col(k).tail(n - k).cwiseAbs().maxCoeff(&p);
    p += k;
    if (!(std::abs(a(p, k)) > pivot_floor)) throw NumericalError("dense_solve: matrix is singular");
    if (p != k) {
      a.row(k).swap(a.row(p));
      std::swap(x[k], x[p]);
    }
    const double inv = 1.0 / a(k, k);
    for (int i = k + 1; i < n; ++i) {
      const double l = a(i, k) * inv;
      if (l == 0.0) continue;
      a(i, k) = l;
      a.row(i).tail(n - k - 1) -= l * a.row(k).tail(n - k - 1);
      x[i] -= l * x[k];
    }
  }
  for (int i = n - 1; i >= 0; --i) {
    double s = x[i];
    for (int j = i + 1; j < n; ++j) s -= a(i, j) * x[j];
    x[i] = s / a(i, i);
  }
  return x;
}

struct SparseDirectSolver::Impl {
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
  int n = 0;
};

SparseDirectSolver::SparseDirectSolver(const CsrMatrix& a) : impl_(std::make_unique<Impl>()) {
  if (a.rows() != a.cols()) throw ConfigError("SparseDirectSolver: matrix is not square");
  impl_->n = a.rows();
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(a.nnz());
  for (int i = 0; i < a.rows(); ++i) {
    for (int k = a.row_offsets()[i]; k < a.row_offsets()[i + 1]; ++k) {
      t.emplace_back(i, a.col_indices()[k], a.values()[k]);
    }
  }
  Eigen::SparseMatrix<double> m(a.rows(), a.cols());
  m.setFromTriplets(t.begin(), t.end());
  impl_->ldlt.compute(m);
  if (impl_->ldlt.info() != Eigen::Success) throw NumericalError("SparseDirectSolver: factorization failed");
}

SparseDirectSolver::~SparseDirectSolver() = default;
SparseDirectSolver::SparseDirectSolver(SparseDirectSolver&&) noexcept = default;
SparseDirectSolver& SparseDirectSolver::operator=(SparseDirectSolver&&) noexcept = default;

Vector SparseDirectSolver::solve(std::span<const double> b) const {
  if (b.size() != static_cast<std::size_t>(impl_->n)) throw ConfigError("SparseDirectSolver: dimension mismatch");
  const Eigen::Map<const Eigen::VectorXd> rhs(b.data(), impl_->n);
  const Eigen::VectorXd x = impl_->ldlt.solve(rhs);
  return Vector(x.data(), x.data() + x.size());
}

EigenBasis sym_eigen(const DenseMatrix& a_in) {
  const int n = static_cast<int>(a_in.rows());
  if (a_in.cols() != n) throw ConfigError("sym_eigen: matrix is not square");
  const double a_norm = a_in.norm();
  if ((a_in - a_in.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, a_norm)) {
    throw ConfigError("sym_eigen: matrix is not symmetric");
  }
  DenseMatrix a = 0.5 * (a_in + a_in.transpose());
  DenseMatrix v = DenseMatrix::Identity(n, n);

  auto off_norm2 = [&] {
    double s = 0.0;
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < j; ++i) s += a(i, j) * a(i, j);
    }
    return 2.0 * s;
  };
  const double target = std::pow(1e-16 * std::max(a_norm, 1e-300), 2);

  for (int sweep = 0; sweep < 100 && off_norm2() > target; ++sweep) {
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        // Skip rotations that cannot change the diagonal in floating point.
        const double g = 100.0 * std::abs(apq);
        if (sweep > 3 && std::abs(a(p, p)) + g == std::abs(a(p, p)) &&
            std::abs(a(q, q)) + g == std::abs(a(q, q))) {
          a(p, q) = a(q, p) = 0.0;
          continue;
        }
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        double t = 1.0 / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        if (theta < 0.0) t = -t;
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        const double tau = s / (1.0 + c);
        a(p, p) -= t * apq;
        a(q, q) += t * apq;
        a(p, q) = a(q, p) = 0.0;
        double* colp = a.col(p).data();
        double* colq = a.col(q).data();
        for (int k = 0; k < n; ++k) {
          if (k == p || k == q) continue;
          const double akp = colp[k], akq = colq[k];
          colp[k] = akp - s * (akq + tau * akp);
          colq[k] = akq + s * (akp - tau * akq);
          a(p, k) = colp[k];
          a(q, k) = colq[k];
        }
        double* vp = v.col(p).data();
        double* vq = v.col(q).data();
        for (int k = 0; k < n; ++k) {
          const double x = vp[k], y = vq[k];
          vp[k] = x - s * (y + tau * x);
          vq[k] = y + s * (x - tau * y);
        }
      }
    }
  }

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int i, int j) { return a(i, i) < a(j, j); });
  EigenBasis basis;
  basis.eigenvalues.resize(n);
  basis.eigenvectors.resize(n, n);
  for (int k = 0; k < n; ++k) {
    basis.eigenvalues[k] = a(order[k], order[k]);
    Eigen::VectorXd col = v.col(order[k]);
    col.normalize();
    int imax = 0;
    col.cwiseAbs().maxCoeff(&imax);
    if (col[imax] < 0.0) col = -col;
    basis.eigenvectors.col(k) = col;
  }
  return basis;
}

}  // namespace hints
