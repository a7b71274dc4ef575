#pragma once

#include <iosfwd>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace hints {

using Vector = std::vector<double>;
using DenseMatrix = Eigen::MatrixXd;

struct Triplet {
  int row = 0;
  int col = 0;
  double value = 0.0;
};

/// Compressed sparse row matrix. Column indices are strictly increasing in
/// every row; the structure is immutable after construction.
class CsrMatrix {
 public:
  CsrMatrix() = default;
  CsrMatrix(int rows, int cols, std::vector<int> row_offsets, std::vector<int> col_indices,
            std::vector<double> values);

  /// Sums duplicate entries. The summation order follows the input order, so
  /// assembly is bit-reproducible.
  static CsrMatrix from_triplets(int rows, int cols, std::span<const Triplet> triplets);
  static CsrMatrix from_dense(const DenseMatrix& dense, double drop_tol = 0.0);
  static CsrMatrix identity(int n);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int nnz() const { return static_cast<int>(values_.size()); }
  std::span<const int> row_offsets() const { return row_offsets_; }
  std::span<const int> col_indices() const { return col_indices_; }
  std::span<const double> values() const { return values_; }

  /// Entry (i, j), zero when not stored.
  double at(int i, int j) const;
  Vector diagonal() const;
  void multiply(std::span<const double> x, std::span<double> y) const;
  Vector multiply(std::span<const double> x) const;
  CsrMatrix scaled(double alpha) const;
  DenseMatrix to_dense() const;
  bool is_symmetric(double tol) const;

  void write_matrix_market(std::ostream& os) const;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<int> row_offsets_{0};
  std::vector<int> col_indices_;
  std::vector<double> values_;
};

/// One forward Gauss-Seidel sweep in natural row order, in place.
void gauss_seidel_sweep(const CsrMatrix& a, std::span<const double> b, std::span<double> u);
/// One damped Jacobi sweep u <- u + omega D^-1 (b - A u), in place.
void jacobi_sweep(const CsrMatrix& a, std::span<const double> b, std::span<double> u,
                  double omega);
/// r = b - A u.
Vector residual(const CsrMatrix& a, std::span<const double> b, std::span<const double> u);

double norm2(std::span<const double> v);
double dot(std::span<const double> a, std::span<const double> b);
/// sqrt(v^T A v).
double energy_norm(const CsrMatrix& a, std::span<const double> v);

/// LU with partial pivoting; the reference ("exact") solve used as an oracle.
/// Throws NumericalError if a pivot falls below 1e-14 * ||A||_inf.
Vector dense_solve(const DenseMatrix& a, std::span<const double> b);

/// Sparse LDL^T direct solver for symmetric positive definite systems.
class SparseDirectSolver {
 public:
  explicit SparseDirectSolver(const CsrMatrix& a);
  ~SparseDirectSolver();
  SparseDirectSolver(SparseDirectSolver&&) noexcept;
  SparseDirectSolver& operator=(SparseDirectSolver&&) noexcept;

  Vector solve(std::span<const double> b) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct EigenBasis {
  Eigen::VectorXd eigenvalues;   // ascending
  DenseMatrix eigenvectors;      // column i pairs with eigenvalues[i]
};

/// Full symmetric eigendecomposition by cyclic Jacobi rotations. Each
/// eigenvector is normalized with its largest-magnitude component positive.
EigenBasis sym_eigen(const DenseMatrix& a);

}  // namespace hints
