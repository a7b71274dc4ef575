#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include <Eigen/Dense>

#include "hints/error.hpp"
#include "hints/linalg.hpp"
#include "hints/rng.hpp"

using namespace hints;

namespace {

DenseMatrix random_spd(int n, std::uint64_t seed) {
  Rng rng(seed);
  DenseMatrix b(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) b(i, j) = rng.normal();
  }
  DenseMatrix a = b.transpose() * b;
  a.diagonal().array() += 0.5;
  return a;
}

Vector random_vector(int n, std::uint64_t seed) {
  Rng rng(seed);
  Vector v(n);
  rng.fill_normal(v);
  return v;
}

DenseMatrix two_by_two() { return (DenseMatrix(2, 2) << 2, 1, 1, 2).finished(); }

// GS iteration matrix -(D+L)^-1 U of a dense matrix.
DenseMatrix gs_iteration_matrix(const DenseMatrix& a) {
  const DenseMatrix dl = a.triangularView<Eigen::Lower>();
  const DenseMatrix u = a.triangularView<Eigen::StrictlyUpper>();
  return -dl.triangularView<Eigen::Lower>().solve(u);
}

}  // namespace

TEST(Csr, FromTripletsSumsDuplicatesAndSorts) {
  const std::vector<Triplet> t{{1, 1, 2.0}, {0, 1, 1.0}, {0, 0, 3.0}, {1, 1, 0.5}, {1, 0, -1.0}};
  const CsrMatrix a = CsrMatrix::from_triplets(2, 2, t);
  EXPECT_EQ(a.nnz(), 4);
  EXPECT_EQ(a.at(1, 1), 2.5);
  EXPECT_EQ(a.at(0, 0), 3.0);
  EXPECT_EQ(a.at(1, 0), -1.0);
  const DenseMatrix d = a.to_dense();
  EXPECT_EQ(d(0, 1), 1.0);
}

TEST(Csr, MultiplyMatchesDense) {
  const DenseMatrix d = random_spd(12, 1);
  const CsrMatrix a = CsrMatrix::from_dense(d);
  const Vector x = random_vector(12, 2);
  const Vector y = a.multiply(x);
  const Eigen::VectorXd ref = d * Eigen::Map<const Eigen::VectorXd>(x.data(), 12);
  for (int i = 0; i < 12; ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
  EXPECT_TRUE(a.is_symmetric(1e-14));
}

TEST(Csr, RejectsBadStructure) {
  EXPECT_THROW(CsrMatrix(2, 2, {0, 1}, {0}, {1.0}), ConfigError);
  EXPECT_THROW(CsrMatrix::from_triplets(2, 2, std::vector<Triplet>{{2, 0, 1.0}}), ConfigError);
}

TEST(Csr, MatrixMarketHeader) {
  std::ostringstream os;
  CsrMatrix::identity(3).write_matrix_market(os);
  EXPECT_EQ(os.str().rfind("%%MatrixMarket matrix coordinate real general", 0), 0u);
}

TEST(GaussSeidel, IdentityGivesRhs) {
  const CsrMatrix a = CsrMatrix::identity(4);
  const Vector b{1, -2, 3, 4};
  Vector u{9, 9, 9, 9};
  gauss_seidel_sweep(a, b, u);
  EXPECT_EQ(u, b);
}

TEST(GaussSeidel, HandComputedTwoByTwo) {
  const CsrMatrix a = CsrMatrix::from_dense(two_by_two());
  Vector u{0, 0};
  gauss_seidel_sweep(a, Vector{3, 3}, u);
  EXPECT_DOUBLE_EQ(u[0], 1.5);
  EXPECT_DOUBLE_EQ(u[1], 0.75);
  gauss_seidel_sweep(a, Vector{3, 3}, u);
  EXPECT_DOUBLE_EQ(u[0], 1.125);
  EXPECT_DOUBLE_EQ(u[1], 0.9375);
}

TEST(GaussSeidel, ZeroDiagonalIsAnError) {
  const CsrMatrix a = CsrMatrix::from_dense((DenseMatrix(2, 2) << 0, 1, 1, 2).finished());
  Vector u{0, 0};
  EXPECT_THROW(gauss_seidel_sweep(a, Vector{1, 1}, u), NumericalError);
}

TEST(GaussSeidel, ErrorMonotoneOnRandomSpd) {
  const DenseMatrix d = random_spd(10, 5);
  const CsrMatrix a = CsrMatrix::from_dense(d);
  const Vector b = random_vector(10, 6);
  const Vector ustar = dense_solve(d, b);
  Vector u(10, 0.0);
  double prev_a = INFINITY;
  for (int s = 0; s < 50; ++s) {
    gauss_seidel_sweep(a, b, u);
    Vector e(10);
    for (int i = 0; i < 10; ++i) e[i] = ustar[i] - u[i];
    const double ea = energy_norm(a, e);
    EXPECT_LE(ea, prev_a * (1 + 1e-12));
    prev_a = ea;
  }
}

TEST(GaussSeidel, SpectralRadiusBelowOneOnSpd) {
  for (int n = 2; n <= 20; n += 3) {
    const DenseMatrix g = gs_iteration_matrix(random_spd(n, 100 + n));
    const double rho = g.eigenvalues().cwiseAbs().maxCoeff();
    EXPECT_LT(rho, 1.0) << n;
  }
}

TEST(Jacobi, HandComputedAndNoOp) {
  const CsrMatrix a = CsrMatrix::from_dense(two_by_two());
  Vector u{0, 0};
  jacobi_sweep(a, Vector{3, 3}, u, 1.0);
  EXPECT_DOUBLE_EQ(u[0], 1.5);
  EXPECT_DOUBLE_EQ(u[1], 1.5);
  Vector v{0.3, -0.7};
  jacobi_sweep(a, Vector{3, 3}, v, 0.0);
  EXPECT_EQ(v, (Vector{0.3, -0.7}));
  Vector w{5, 6};
  jacobi_sweep(CsrMatrix::identity(2), Vector{1, 2}, w, 1.0);
  EXPECT_EQ(w, (Vector{1, 2}));
}

TEST(DenseSolve, HilbertRowSums) {
  DenseMatrix h(4, 4);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) h(i, j) = 1.0 / (i + j + 1);
  }
  Vector b(4);
  for (int i = 0; i < 4; ++i) b[i] = h.row(i).sum();
  const Vector u = dense_solve(h, b);
  for (double v : u) EXPECT_NEAR(v, 1.0, 1e-8);
}

TEST(DenseSolve, RandomSpdResidual) {
  const DenseMatrix d = random_spd(50, 9);
  const Vector b = random_vector(50, 10);
  const Vector u = dense_solve(d, b);
  EXPECT_LE(norm2(residual(CsrMatrix::from_dense(d), b, u)), 1e-10 * norm2(b));
}

TEST(DenseSolve, SingularIsAnError) {
  const DenseMatrix s = (DenseMatrix(2, 2) << 1, 2, 2, 4).finished();
  EXPECT_THROW(dense_solve(s, Vector{1, 1}), NumericalError);
}

TEST(SparseDirect, MatchesDense) {
  const DenseMatrix d = random_spd(30, 12);
  const Vector b = random_vector(30, 13);
  const Vector u1 = dense_solve(d, b);
  const Vector u2 = SparseDirectSolver(CsrMatrix::from_dense(d)).solve(b);
  for (int i = 0; i < 30; ++i) EXPECT_NEAR(u1[i], u2[i], 1e-9 * (1 + std::abs(u1[i])));
}

TEST(SymEigen, Diagonal) {
  const EigenBasis e = sym_eigen(Eigen::Vector3d(3, 1, 2).asDiagonal().toDenseMatrix());
  EXPECT_NEAR(e.eigenvalues[0], 1, 1e-14);
  EXPECT_NEAR(e.eigenvalues[1], 2, 1e-14);
  EXPECT_NEAR(e.eigenvalues[2], 3, 1e-14);
}

TEST(SymEigen, TwoByTwoHand) {
  const EigenBasis e = sym_eigen(two_by_two());
  EXPECT_NEAR(e.eigenvalues[0], 1, 1e-14);
  EXPECT_NEAR(e.eigenvalues[1], 3, 1e-14);
  const double r = 1 / std::sqrt(2.0);
  EXPECT_NEAR(std::abs(e.eigenvectors(0, 0)), r, 1e-14);
  EXPECT_NEAR(e.eigenvectors(0, 0), -e.eigenvectors(1, 0), 1e-14);
  EXPECT_NEAR(e.eigenvectors(0, 1), e.eigenvectors(1, 1), 1e-14);
}

TEST(SymEigen, DefiningPropertyRandom40) {
  Rng rng(21);
  DenseMatrix a(40, 40);
  for (int i = 0; i < 40; ++i) {
    for (int j = 0; j <= i; ++j) a(i, j) = a(j, i) = rng.normal();
  }
  const EigenBasis e = sym_eigen(a);
  const DenseMatrix r = a * e.eigenvectors - e.eigenvectors * e.eigenvalues.asDiagonal();
  EXPECT_LE(r.norm(), 1e-8 * a.norm());
  EXPECT_LE((e.eigenvectors.transpose() * e.eigenvectors - DenseMatrix::Identity(40, 40)).norm(), 1e-10);
  for (int i = 1; i < 40; ++i) EXPECT_LE(e.eigenvalues[i - 1], e.eigenvalues[i]);
}

TEST(SymEigen, RejectsNonSymmetric) {
  EXPECT_THROW(sym_eigen((DenseMatrix(2, 2) << 1, 2, 0, 1).finished()), ConfigError);
}

TEST(Residual, TrivialCases) {
  const Vector r = residual(CsrMatrix::identity(2), Vector{1, 2}, Vector{1, 0});
  EXPECT_EQ(r, (Vector{0, 2}));
  const CsrMatrix a = CsrMatrix::from_dense(two_by_two());
  EXPECT_EQ(residual(a, Vector{3, 3}, Vector{0, 0}), (Vector{3, 3}));
  const Vector u = dense_solve(two_by_two(), Vector{3, 3});
  EXPECT_LE(norm2(residual(a, Vector{3, 3}, u)), 1e-10 * norm2(Vector{3, 3}));
}
