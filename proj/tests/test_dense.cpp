#include "support.hpp"

#include "tsvdlm/dense.hpp"
#include "tsvdlm/inversion.hpp"

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include <limits>

namespace tsvdlm {
namespace {

Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix a(static_cast<Eigen::Index>(rows.size()),
           static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double v : r) a(i, j++) = v;
    ++i;
  }
  return a;
}

TEST(QrThin, ThreeFourFive) {
  const auto qr = dense::qr_thin(mat({{3}, {4}}));
  EXPECT_NEAR(qr.q(0, 0), 0.6, 1e-15);
  EXPECT_NEAR(qr.q(1, 0), 0.8, 1e-15);
  EXPECT_NEAR(qr.r(0, 0), 5.0, 1e-14);
  EXPECT_FALSE(qr.rank_deficient);
}

TEST(QrThin, Identity) {
  const auto qr = dense::qr_thin(Matrix::Identity(3, 3));
  EXPECT_LE((qr.q - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LE((qr.r - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(QrThin, RandomResidualAndOrthonormality) {
  const Matrix a = gaussian_matrix(20, 8, 7);
  const auto qr = dense::qr_thin(a);
  EXPECT_EQ(qr.q.cols(), 8);
  EXPECT_LE((qr.q * qr.r - a).norm() / a.norm(), 1e-12);
  EXPECT_LE(dense::orthonormality_defect(qr.q), 1e-12);
  EXPECT_LE(Matrix(qr.r.triangularView<Eigen::StrictlyLower>()).norm(), 0.0);
}

TEST(QrThin, RankDeficientIsFlaggedAndCompleted) {
  Matrix a = gaussian_matrix(10, 4, 3);
  a.col(2) = a.col(0) + a.col(1);
  const auto qr = dense::qr_thin(a);
  EXPECT_TRUE(qr.rank_deficient);
  EXPECT_LE(dense::orthonormality_defect(qr.q), 1e-12);
  EXPECT_LE((qr.q * qr.r - a).norm() / a.norm(), 1e-12);
}

TEST(QrThin, RejectsWideAndNonFinite) {
  EXPECT_THROW(dense::qr_thin(Matrix::Ones(2, 3)), std::invalid_argument);
  Matrix a = Matrix::Ones(3, 2);
  a(1, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(dense::qr_thin(a), NumericalError);
}

TEST(SvdFull, Diagonal) {
  const auto s = dense::svd_full(Vector(Eigen::Vector3d(3, 2, 1)).asDiagonal());
  EXPECT_NEAR(s.lambda(0), 3, 1e-14);
  EXPECT_NEAR(s.lambda(1), 2, 1e-14);
  EXPECT_NEAR(s.lambda(2), 1, 1e-14);
}

TEST(SvdFull, Permutation) {
  const auto s = dense::svd_full(mat({{0, 1}, {1, 0}}));
  EXPECT_NEAR(s.lambda(0), 1, 1e-14);
  EXPECT_NEAR(s.lambda(1), 1, 1e-14);
}

TEST(SvdFull, MatchesGramEigenvalues) {
  const Matrix a = gaussian_matrix(10, 6, 21);
  const auto s = dense::svd_full(a);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(a.transpose() * a);
  const Vector ev = eig.eigenvalues().reverse().cwiseSqrt();
  EXPECT_LE((s.lambda - ev).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LE((s.u * s.lambda.asDiagonal() * s.v.transpose() - a).norm() / a.norm(), 1e-10);
  EXPECT_LE(dense::orthonormality_defect(s.u), 1e-12);
  EXPECT_LE(dense::orthonormality_defect(s.v), 1e-12);
}

TEST(SvdFull, SignConventionAndSorting) {
  const Matrix a = gaussian_matrix(7, 5, 9);
  const auto s = dense::svd_full(a);
  for (Eigen::Index j = 0; j < s.u.cols(); ++j) {
    Eigen::Index i = 0;
    while (std::abs(s.u(i, j)) <= 1e-300) ++i;
    EXPECT_GT(s.u(i, j), 0.0);
  }
  for (Eigen::Index i = 1; i < s.lambda.size(); ++i) EXPECT_GE(s.lambda(i - 1), s.lambda(i));
}

TEST(SvdFull, PermutationInvariance) {
  const Matrix a = gaussian_matrix(9, 6, 4);
  Eigen::PermutationMatrix<Eigen::Dynamic> pr(9), pc(6);
  pr.setIdentity();
  pc.setIdentity();
  std::swap(pr.indices()(0), pr.indices()(5));
  std::swap(pc.indices()(1), pc.indices()(4));
  const auto s0 = dense::svd_full(a);
  const auto s1 = dense::svd_full(pr * a * pc);
  EXPECT_LE((s0.lambda - s1.lambda).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Cholesky, Diagonal) {
  const Matrix l = dense::cholesky_lower(mat({{4, 0}, {0, 9}}));
  EXPECT_LE((l - mat({{2, 0}, {0, 3}})).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Cholesky, TwoByTwo) {
  const Matrix l = dense::cholesky_lower(mat({{4, 2}, {2, 5}}));
  EXPECT_LE((l - mat({{2, 0}, {1, 2}})).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Cholesky, RegularizerOnThreeByThreeGrid) {
  const forward::TimeSteppingModel model([] {
    forward::ModelConfig c;
    c.nx = 3;
    c.nz = 3;
    c.n_producers = 1;
    c.n_obs_wells = 2;
    return c;
  }());
  const auto w = inversion::build_w(model.n_cells(), model.connections());
  const Matrix r = Matrix(w.transpose() * w);
  const Matrix l = dense::cholesky_lower(r);
  EXPECT_LE((l * l.transpose() - r).norm() / r.norm(), 1e-10);
}

TEST(Cholesky, RefactoringIsIdempotent) {
  const Matrix b = gaussian_matrix(6, 6, 2);
  const Matrix a = b * b.transpose() + Matrix::Identity(6, 6);
  const Matrix l = dense::cholesky_lower(a);
  const Matrix l2 = dense::cholesky_lower(l * l.transpose());
  EXPECT_LE((l - l2).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_TRUE((l.diagonal().array() > 0).all());
}

TEST(Cholesky, ReportsFailingPivot) {
  try {
    dense::cholesky_lower(mat({{4, 2, 0}, {2, 1, 0}, {0, 0, 1}}));
    FAIL() << "expected NotPositiveDefinite";
  } catch (const NotPositiveDefinite& e) {
    EXPECT_EQ(e.pivot(), 1u);
    EXPECT_NE(std::string(e.what()).find("not positive definite"), std::string::npos);
  }
}

TEST(Cholesky, RejectsAsymmetric) {
  EXPECT_THROW(dense::cholesky_lower(mat({{4, 1}, {0, 4}})), NumericalError);
}

TEST(SolveTriangular, IdentityAndDiagonal) {
  const Matrix b = gaussian_matrix(3, 2, 5);
  EXPECT_LE((dense::solve_triangular(Matrix::Identity(3, 3), b, dense::Triangle::lower) - b)
                .cwiseAbs()
                .maxCoeff(),
            0.0);
  const Matrix x = dense::solve_triangular(mat({{2, 0}, {0, 4}}), mat({{2}, {8}}),
                                           dense::Triangle::upper);
  EXPECT_NEAR(x(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(x(1, 0), 2.0, 1e-15);
}

TEST(SolveTriangular, RandomUpperAllVariants) {
  Matrix t = Matrix(gaussian_matrix(12, 12, 8).triangularView<Eigen::Upper>());
  t.diagonal().array() += 6.0;
  const Matrix b = gaussian_matrix(12, 3, 9);
  const Matrix bt = gaussian_matrix(3, 12, 10);
  auto rel = [](const Matrix& a, const Matrix& b) { return (a - b).norm() / b.norm(); };
  using dense::Op;
  using dense::Side;
  using dense::Triangle;
  EXPECT_LE(rel(t * dense::solve_triangular(t, b, Triangle::upper), b), 1e-12);
  EXPECT_LE(rel(t.transpose() * dense::solve_triangular(t, b, Triangle::upper, Side::left,
                                                        Op::transpose),
                b),
            1e-12);
  EXPECT_LE(rel(dense::solve_triangular(t, bt, Triangle::upper, Side::right) * t, bt), 1e-12);
  EXPECT_LE(rel(dense::solve_triangular(t, bt, Triangle::upper, Side::right, Op::transpose) *
                    t.transpose(),
                bt),
            1e-12);
}

TEST(SolveTriangular, NearSingularFails) {
  Matrix t = Matrix::Identity(3, 3);
  t(1, 1) = 1e-16;
  EXPECT_THROW(dense::solve_triangular(t, Matrix::Ones(3, 1), dense::Triangle::lower),
               NumericalError);
  EXPECT_THROW(dense::solve_triangular(Matrix::Ones(2, 3), Matrix::Ones(2, 1),
                                       dense::Triangle::lower),
               std::invalid_argument);
}

}  // namespace
}  // namespace tsvdlm
