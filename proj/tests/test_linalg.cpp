#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "ntklab/linalg.hpp"
#include "oracles.hpp"

using namespace ntklab;

namespace {

double max_reconstruction_error(const DenseMatrix& a, const EigenDecomposition& e) {
  const std::size_t n = a.rows();
  double m = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < n; ++k) s += e.eigenvectors(i, k) * e.eigenvalues[k] * e.eigenvectors(j, k);
      m = std::max(m, std::abs(s - a(i, j)));
    }
  return m;
}

double max_orthonormality_error(const DenseMatrix& v) {
  const DenseMatrix vtv = matmul_tn(v, v);
  return max_abs_diff(vtv, DenseMatrix::identity(v.cols()));
}

}  // namespace

TEST(SymEigen, IdentityHasUnitSpectrum) {
  const auto e = sym_eigen(DenseMatrix::identity(3));
  for (double l : e.eigenvalues) EXPECT_DOUBLE_EQ(l, 1.0);
  EXPECT_LE(max_orthonormality_error(e.eigenvectors), 1e-12);
}

TEST(SymEigen, TwoByTwoMatchesCharacteristicPolynomialRoots) {
  const auto a = DenseMatrix::from_rows({{2, 1}, {1, 2}});
  // lambda^2 - 4 lambda + 3
  auto roots = oracle::quadratic_roots_by_bisection(-trace(a), a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0), -10, 10);
  ASSERT_EQ(roots.size(), 2u);
  std::sort(roots.rbegin(), roots.rend());
  const auto e = sym_eigen(a);
  EXPECT_NEAR(e.eigenvalues[0], roots[0], 1e-10);
  EXPECT_NEAR(e.eigenvalues[1], roots[1], 1e-10);
  EXPECT_NEAR(e.eigenvalues[0], 3.0, 1e-12);
  EXPECT_NEAR(e.eigenvalues[1], 1.0, 1e-12);
}

TEST(SymEigen, RankOneOuterProduct) {
  const Vec64 v{1, 2, 2};
  const auto e = sym_eigen(outer(v, v));
  EXPECT_NEAR(e.eigenvalues[0], 9.0, 1e-12);
  EXPECT_NEAR(e.eigenvalues[1], 0.0, 1e-12);
  EXPECT_NEAR(e.eigenvalues[2], 0.0, 1e-12);
  const double sign = e.eigenvectors(0, 0) > 0 ? 1.0 : -1.0;
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(sign * e.eigenvectors(i, 0), v[i] / 3.0, 1e-12);
}

TEST(SymEigen, RejectsBadInput) {
  EXPECT_THROW(sym_eigen(DenseMatrix(2, 3)), DimensionError);
  EXPECT_THROW(sym_eigen(DenseMatrix::from_rows({{1, 2}, {2.001, 1}})), SymmetryError);
  EXPECT_THROW(sym_eigen(DenseMatrix()), DimensionError);
  // Within the 1e-9 asymmetry allowance.
  EXPECT_NO_THROW(sym_eigen(DenseMatrix::from_rows({{1, 2}, {2 + 5e-10, 1}})));
}

TEST(SymEigen, RandomSymmetricReconstructionAndOrthonormality) {
  SeededRng rng(11);
  for (std::size_t n : {1u, 2u, 5u, 13u, 30u}) {
    for (int rep = 0; rep < 3; ++rep) {
      const DenseMatrix a = oracle::random_symmetric(n, rng);
      const auto e = sym_eigen(a);
      EXPECT_LE(max_reconstruction_error(a, e), 1e-8) << "n=" << n;
      EXPECT_LE(max_orthonormality_error(e.eigenvectors), 1e-8) << "n=" << n;
      double sum = 0;
      for (double l : e.eigenvalues) sum += l;
      EXPECT_NEAR(sum, trace(a), 1e-9 * static_cast<double>(n));
      EXPECT_TRUE(std::is_sorted(e.eigenvalues.rbegin(), e.eigenvalues.rend()));
    }
  }
}

TEST(SymEigen, LargeEntriesStillReconstruct) {
  SeededRng rng(3);
  DenseMatrix a = scale(oracle::random_symmetric(12, rng), 1e3);
  const auto e = sym_eigen(a);
  EXPECT_LE(max_reconstruction_error(a, e), 1e-8);
}

TEST(SymEigen, PsdInputsHaveNonNegativeSpectrum) {
  SeededRng rng(5);
  for (int rep = 0; rep < 10; ++rep) {
    const auto a = oracle::random_psd(10, rng, 1 + rng.below(10));
    for (double l : sym_eigen(a).eigenvalues) EXPECT_GE(l, -1e-9);
  }
}

TEST(SymEigen, WeylInequalityOnRandomPairs) {
  SeededRng rng(8);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t n = 2 + rng.below(12);
    const auto a = oracle::random_symmetric(n, rng);
    const auto b = oracle::random_symmetric(n, rng);
    const double lhs = sym_eigen(add(a, b)).eigenvalues[0];
    EXPECT_LE(lhs, sym_eigen(a).eigenvalues[0] + sym_eigen(b).eigenvalues[0] + 1e-9);
  }
}

TEST(Norms, Frobenius) {
  EXPECT_EQ(frobenius_norm(DenseMatrix(3, 4)), 0.0);
  EXPECT_DOUBLE_EQ(frobenius_norm(DenseMatrix::identity(4)), 2.0);
  EXPECT_DOUBLE_EQ(frobenius_norm(DenseMatrix::from_rows({{3, 4}, {0, 0}})), 5.0);
}

TEST(Norms, SpectralDiagonalAndRankOne) {
  EXPECT_NEAR(spectral_norm(DenseMatrix::from_rows({{5, 0}, {0, 2}})), 5.0, 1e-9);
  const Vec64 u{1, -2, 0.5}, v{3, 1};
  EXPECT_NEAR(spectral_norm(outer(u, v)), norm2(u) * norm2(v), 1e-9);
  EXPECT_EQ(spectral_norm(DenseMatrix(3, 2)), 0.0);
}

TEST(Norms, SpectralAgreesWithEigensolver) {
  SeededRng rng(21);
  for (int rep = 0; rep < 10; ++rep) {
    const DenseMatrix a = oracle::random_matrix(5, 3, rng);
    const double ref = std::sqrt(sym_eigen(matmul_tn(a, a)).eigenvalues[0]);
    EXPECT_NEAR(spectral_norm(a), ref, 1e-8);
    EXPECT_LE(spectral_norm(a), frobenius_norm(a) + 1e-12);
  }
}

TEST(Norms, SpectralStartVectorOrthogonalToTopDirection) {
  // A^T A = [[2,-2],[-2,2]] annihilates the all-ones start vector.
  const auto a = DenseMatrix::from_rows({{1, -1}, {1, -1}});
  EXPECT_NEAR(spectral_norm(a), 2.0, 1e-9);
}

TEST(Products, IdentityAndTransposeRule) {
  SeededRng rng(2);
  const DenseMatrix a = oracle::random_matrix(3, 4, rng);
  const DenseMatrix b = oracle::random_matrix(4, 2, rng);
  EXPECT_EQ(matmul(a, DenseMatrix::identity(4)), a);
  EXPECT_EQ(matmul(a, b).transposed(), matmul(b.transposed(), a.transposed()));
  EXPECT_EQ(matmul_tn(a, oracle::random_matrix(3, 2, rng)).rows(), 4u);
  EXPECT_THROW(matmul(a, a), DimensionError);
  EXPECT_THROW(add(a, b), DimensionError);
}

TEST(Products, Dot) {
  EXPECT_EQ(dot(Vec64{1, 0}, Vec64{0, 1}), 0.0);
  EXPECT_THROW(dot(Vec64{1}, Vec64{1, 2}), DimensionError);
}

TEST(Csv, MatrixRoundTripIsExact) {
  SeededRng rng(9);
  const DenseMatrix a = scale(oracle::random_matrix(4, 3, rng), 1e-7);
  std::stringstream ss;
  write_matrix_csv(ss, a);
  EXPECT_EQ(read_matrix_csv(ss), a);
}

TEST(Csv, RaggedInputReportsLine) {
  std::stringstream ss("1,2\n3\n");
  try {
    read_matrix_csv(ss);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}
