#include "support.hpp"

#include "tsvdlm/tsvd.hpp"

#include <gtest/gtest.h>

namespace tsvdlm::tsvd {
namespace {

using testing::geometric_spectrum;
using testing::with_spectrum;

double max_rel_error(const Vector& est, const Vector& ref) {
  double e = 0.0;
  for (Eigen::Index i = 0; i < est.size(); ++i) {
    e = std::max(e, std::abs(est(i) - ref(i)) / ref(i));
  }
  return e;
}

void expect_valid(const TruncatedSvd& s) { EXPECT_NO_THROW(s.validate(1e-8)); }

// Lanczos ---------------------------------------------------------------------

TEST(Lanczos, DiagonalMatrix) {
  const DenseOp a(Vector(Eigen::Vector3d(5, 3, 1)).asDiagonal());
  const auto r = tsvd_lanczos(a, 2, 1e-10);
  ASSERT_EQ(r.svd.rank(), 2);
  EXPECT_NEAR(r.svd.lambda(0), 5.0, 1e-10);
  EXPECT_NEAR(r.svd.lambda(1), 3.0, 1e-10);
  expect_valid(r.svd);
}

TEST(Lanczos, RankOneIsExactWithinTwoIterations) {
  const Vector a = gaussian_vector(12, 1);
  const Vector b = gaussian_vector(9, 2);
  const DenseOp op(a * b.transpose());
  const auto r = tsvd_lanczos(op, 1, 1e-12);
  EXPECT_LE(r.iterations, 2);
  EXPECT_NEAR(r.svd.lambda(0), a.norm() * b.norm(), 1e-12 * a.norm() * b.norm());
}

TEST(Lanczos, MatchesDenseSvd) {
  const Matrix a = with_spectrum(40, 30, geometric_spectrum(30, 0.8), 3);
  const auto ref = dense::svd_full(a);
  const auto r = tsvd_lanczos(DenseOp(a), 10, 1e-10);
  EXPECT_LE(max_rel_error(r.svd.lambda, ref.lambda.head(10)), 1e-8);
  EXPECT_FALSE(r.exhausted);
  EXPECT_TRUE(r.converged);
  expect_valid(r.svd);
  // Singular vectors pair with the values.
  const Matrix av = a * r.svd.v;
  EXPECT_LE((av - r.svd.u * r.svd.lambda.asDiagonal()).norm(), 1e-6);
}

TEST(Lanczos, FullRankOnWideOperator) {
  const Matrix a = gaussian_matrix(12, 18, 7) * Vector::LinSpaced(18, 1.0, 1e4).asDiagonal();
  const auto ref = dense::svd_full(a);
  const auto r = tsvd_lanczos(DenseOp(a), 12, 1e-10);
  EXPECT_LE(max_rel_error(r.svd.lambda, ref.lambda), 1e-10);
  EXPECT_LE((a - r.svd.reconstruct()).norm() / a.norm(), 1e-12);
}

TEST(Lanczos, BreakdownReturnsExhaustedFactors) {
  const Matrix a = with_spectrum(30, 20, Vector(Eigen::Vector3d(3, 2, 1)), 4);
  const auto r = tsvd_lanczos(DenseOp(a), 6, 1e-10);
  EXPECT_TRUE(r.exhausted);
  EXPECT_LE(r.svd.rank(), 4);
  EXPECT_NEAR(r.svd.lambda(0), 3.0, 1e-10);
  EXPECT_NEAR(r.svd.lambda(2), 1.0, 1e-10);
  EXPECT_LE((a - r.svd.reconstruct()).norm(), 1e-10);
}

TEST(Lanczos, SvCutReducesRank) {
  Vector s(8);
  s << 10, 9, 8, 4, 1, 0.5, 0.2, 0.1;
  const Matrix a = with_spectrum(30, 20, s, 5);
  const auto r = tsvd_lanczos(DenseOp(a), 8, 1e-10, 0.5);
  EXPECT_EQ(r.rank, 4);
  EXPECT_NEAR(r.svd.lambda(3), 4.0, 1e-8);
}

TEST(Lanczos, CallCounts) {
  const Matrix a = with_spectrum(50, 40, geometric_spectrum(40, 0.9), 6);
  const DenseOp op(a);
  const CountingOp c(op);
  const auto r = tsvd_lanczos(c, 5, 1e-8);
  const auto n = c.counts();
  EXPECT_EQ(n.forward_cols, r.iterations + 1);
  EXPECT_EQ(n.adjoint_cols, r.iterations);
  EXPECT_GE(r.iterations, 6);
}

TEST(Lanczos, RejectsBadRank) {
  const DenseOp a(Matrix::Identity(3, 3));
  EXPECT_THROW(tsvd_lanczos(a, 0, 1e-5), std::invalid_argument);
  EXPECT_THROW(tsvd_lanczos(a, 4, 1e-5), std::invalid_argument);
}

// Randomized ------------------------------------------------------------------

Matrix rank_r(Eigen::Index rows, Eigen::Index cols, int r, std::uint64_t seed) {
  return gaussian_matrix(rows, r, seed, 7) * gaussian_matrix(r, cols, seed, 8);
}

TEST(TwoView, ExactRankRecovery) {
  const Matrix a = rank_r(60, 40, 6, 1);
  const auto s = tsvd_2view(DenseOp(a), 8, 5, 3);
  EXPECT_LE((a - s.reconstruct()).norm(), 1e-8 * a.norm());
  expect_valid(s);
}

TEST(TwoView, ZeroMatrix) {
  const auto s = tsvd_2view(DenseOp(Matrix::Zero(20, 10)), 3, 2, 1);
  EXPECT_EQ(s.lambda.cwiseAbs().maxCoeff(), 0.0);
}

TEST(TwoView, GeometricSpectrumAccuracy) {
  // lambda_i = 2^{-i}, n = 200, p = 20, l = 10: leading 10 within 5%.
  int good = 0;
  const Vector sv = geometric_spectrum(200, 0.5);
  const Matrix a = with_spectrum(200, 200, sv, 11);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = tsvd_2view(DenseOp(a), 20, 10, seed);
    good += max_rel_error(s.lambda.head(10), sv.head(10)) <= 0.05 ? 1 : 0;
  }
  EXPECT_GE(good, 18);
}

TEST(TwoView, CallCountsAndDeterminism) {
  const Matrix a = with_spectrum(50, 30, geometric_spectrum(30, 0.7), 2);
  const DenseOp op(a);
  const CountingOp c(op);
  const auto s1 = tsvd_2view(c, 7, 4, 99);
  EXPECT_EQ(c.counts().forward_cols, 11);
  EXPECT_EQ(c.counts().adjoint_cols, 11);
  EXPECT_EQ(c.counts().forward_calls, 1);
  EXPECT_EQ(c.counts().adjoint_calls, 1);
  const auto s2 = tsvd_2view(op, 7, 4, 99);
  EXPECT_TRUE(s1.u == s2.u && s1.v == s2.v && s1.lambda == s2.lambda);
}

TEST(TwoView, RejectsWideOperator) {
  EXPECT_THROW(tsvd_2view(DenseOp(Matrix::Ones(3, 5)), 1, 1, 0), std::invalid_argument);
}

TEST(OneView, ExactRankRecovery) {
  const Matrix a = rank_r(60, 40, 6, 2);
  const auto s = tsvd_1view(DenseOp(a), 8, 4, 8, 3);
  EXPECT_LE((a - s.reconstruct()).norm(), 1e-6 * a.norm());
  expect_valid(s);
}

TEST(OneView, ZeroMatrixFailsLoudlyOrReturnsZero) {
  // With A = 0 the core triangle is built from the sample alone, so it is
  // well conditioned and the estimate is exactly zero.
  const auto s = tsvd_1view(DenseOp(Matrix::Zero(20, 10)), 3, 2, 4, 1);
  EXPECT_EQ(s.lambda.cwiseAbs().maxCoeff(), 0.0);
}

TEST(OneView, LessAccurateThanTwoView) {
  const Matrix a = with_spectrum(200, 200, geometric_spectrum(200, 0.5), 11);
  int worse = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const DenseOp op(a);
    const double e2 = (a - tsvd_2view(op, 20, 10, seed).reconstruct()).norm();
    const double e1 = (a - tsvd_1view(op, 20, 10, 20, seed).reconstruct()).norm();
    worse += e1 >= e2 ? 1 : 0;
  }
  EXPECT_GE(worse, 15);
}

TEST(OneView, CallCountsAndThreadIndependence) {
  const Matrix a = with_spectrum(50, 30, geometric_spectrum(30, 0.7), 2);
  const DenseOp op(a);
  const CountingOp c(op);
  const auto s1 = tsvd_1view(c, 7, 3, 9, 5, {}, true, 2);
  EXPECT_EQ(c.counts().forward_cols, 10);
  EXPECT_EQ(c.counts().adjoint_cols, 16);
  const auto s2 = tsvd_1view(op, 7, 3, 9, 5, {}, true, 1);
  EXPECT_TRUE(s1.u == s2.u && s1.v == s2.v && s1.lambda == s2.lambda);
}

TEST(OneView, IllConditionedCoreFails) {
  // Psi^T equal to a basis orthogonal to range(A) makes Psi Q singular.
  Matrix a = Matrix::Zero(20, 6);
  a.topRows(6) = Matrix::Identity(6, 6);
  OneViewPrefixes pre;
  pre.psi_t = Matrix::Zero(20, 4);
  pre.psi_t->bottomRows(4) = Matrix::Identity(4, 4);
  EXPECT_THROW(tsvd_1view(DenseOp(a), 2, 1, 2, 0, pre, false), NumericalError);
}

TEST(SubspaceIteration, InvariantSubspace) {
  Matrix a = Matrix::Zero(2, 2);
  a(0, 0) = 4;
  a(1, 1) = 1;
  Matrix v0 = Matrix::Zero(2, 1);
  v0(0, 0) = 1;
  const auto r = subspace_iteration(DenseOp(a), 1, 1e-12, v0);
  EXPECT_EQ(r.iterations, 1);
  EXPECT_NEAR(r.svd.lambda(0), 4.0, 1e-14);
}

TEST(SubspaceIteration, RandomMatrixMatchesOracle) {
  const Matrix a = gaussian_matrix(30, 20, 3);
  const auto ref = dense::svd_full(a);
  const Matrix v0 = dense::orth(gaussian_matrix(20, 5, 4));
  const auto r = subspace_iteration(DenseOp(a), 5, 1e-10, v0, 2000);
  EXPECT_TRUE(r.converged);
  // Stagnation at eps_sv leaves an error of roughly eps_sv / (1 - rate).
  EXPECT_LE(max_rel_error(r.svd.lambda, ref.lambda.head(5)), 1e-6);
  expect_valid(r.svd);
}

TEST(SubspaceIteration, ExactStartConvergesInOneIteration) {
  const Matrix a = with_spectrum(30, 20, geometric_spectrum(20, 0.6), 5);
  const auto ref = dense::svd_full(a);
  const auto r = subspace_iteration(DenseOp(a), 4, 1e-8, ref.v.leftCols(4));
  EXPECT_EQ(r.iterations, 1);
  EXPECT_LE(max_rel_error(r.svd.lambda, ref.lambda.head(4)), 1e-10);
}

TEST(Voronin, ExactRankAndZero) {
  const Matrix a = rank_r(60, 40, 6, 3);
  const auto s = tsvd_2view_voronin(DenseOp(a), 8, 4, 2);
  EXPECT_LE((a - s.reconstruct()).norm(), 1e-8 * a.norm());
  expect_valid(s);
  const auto z = tsvd_2view_voronin(DenseOp(Matrix::Zero(20, 10)), 3, 2, 1);
  EXPECT_EQ(z.lambda.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Voronin, AgreesWithTwoView) {
  const Matrix a = with_spectrum(200, 200, geometric_spectrum(200, 0.5), 12);
  const DenseOp op(a);
  const auto x = tsvd_2view(op, 20, 10, 4);
  const auto y = tsvd_2view_voronin(op, 20, 10, 4);
  EXPECT_LE(max_rel_error(y.lambda, x.lambda), 0.10);
}

TEST(Estimators, NoOvershootOfTopSingularValue) {
  const Matrix a = with_spectrum(60, 40, geometric_spectrum(40, 0.8), 13);
  const double top = dense::svd_full(a).lambda(0);
  for (auto m : {Estimator::lanczos, Estimator::two_view, Estimator::one_view,
                 Estimator::subspace_iter, Estimator::two_view_voronin}) {
    EstimateRequest req;
    req.method = m;
    req.sketch.p = 8;
    req.sketch.seed = 3;
    const auto r = estimate(DenseOp(a), req);
    EXPECT_LE(r.svd.lambda.maxCoeff(), top * (1 + 1e-8)) << to_string(m);
    expect_valid(r.svd);
  }
}

// Re-use samples ---------------------------------------------------------------

TEST(ReuseSamples, FullPrefix) {
  const TruncatedSvd prev{dense::orth(gaussian_matrix(9, 3, 1)), Vector::Ones(3),
                          dense::orth(gaussian_matrix(7, 3, 2))};
  const Matrix s = build_reuse_samples(prev, 3, SampleSpace::right, 5);
  EXPECT_TRUE(s == prev.v);
  const Matrix l = build_reuse_samples(prev, 3, SampleSpace::left, 5);
  EXPECT_TRUE(l == prev.u);
}

TEST(ReuseSamples, EmptyPrefixMatchesPlainSampling) {
  const TruncatedSvd prev{Matrix(9, 0), Vector(0), Matrix(7, 0)};
  const Matrix s = build_reuse_samples(prev, 4, SampleSpace::right, 5, 1);
  EXPECT_TRUE(s == gaussian_matrix(7, 4, 5, 1));
}

TEST(ReuseSamples, PrefixThenGaussianTail) {
  const TruncatedSvd prev{dense::orth(gaussian_matrix(9, 3, 1)), Vector::Ones(3),
                          dense::orth(gaussian_matrix(40, 3, 2))};
  const Matrix s = build_reuse_samples(prev, 5, SampleSpace::right, 5);
  EXPECT_TRUE(s.leftCols(3) == prev.v);
  // Moments of the fresh tail over 1000 seeds.
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const Matrix t = build_reuse_samples(prev, 5, SampleSpace::right, seed).rightCols(2);
    sum += t.sum();
    sq += t.squaredNorm();
    n += static_cast<std::size_t>(t.size());
  }
  const double mean = sum / static_cast<double>(n);
  const double var = sq / static_cast<double>(n) - mean * mean;
  EXPECT_LE(std::abs(mean), 0.1);
  EXPECT_LE(std::abs(var - 1.0), 0.15);
}

TEST(ReuseSamples, PrefixWiderThanTargetFails) {
  const TruncatedSvd prev{Matrix::Identity(4, 3), Vector::Ones(3), Matrix::Identity(4, 3)};
  EXPECT_THROW(build_reuse_samples(prev, 2, SampleSpace::right, 0), std::invalid_argument);
}

// Schedules and config -----------------------------------------------------------

TEST(Schedule, Linear) {
  TruncationSchedule s;
  EXPECT_EQ(schedule_rank(s, 1), 1);
  EXPECT_EQ(schedule_rank(s, 4), 7);
  EXPECT_EQ(schedule_rank(s, 1000), 50);
}

TEST(Schedule, SvCut) {
  TruncationSchedule s;
  s.kind = ScheduleKind::sv_cut;
  EXPECT_EQ(schedule_rank(s, 1, Vector(Eigen::Vector3d(10, 5, 1))), 2);
  EXPECT_DOUBLE_EQ(s.threshold(3), 0.125);
  EXPECT_THROW(schedule_rank(s, 1), std::invalid_argument);
  EXPECT_THROW(schedule_rank(s, 1, Vector(0)), std::invalid_argument);
  EXPECT_EQ(schedule_rank(s, 1, Vector(Eigen::Vector3d(10, 9, 8))), 3);
}

TEST(SketchConfig, Validation) {
  SketchConfig c;
  EXPECT_TRUE(validate(c).empty());
  c.l2 = c.l1;
  EXPECT_THROW(validate(c), std::invalid_argument);
  c.allow_equal_oversampling = true;
  EXPECT_EQ(validate(c).size(), 1u);
  c.l2 = c.l1 - 1;
  EXPECT_THROW(validate(c), std::invalid_argument);
  c = {};
  c.p = 0;
  EXPECT_THROW(validate(c), std::invalid_argument);
}

// Dispatch ---------------------------------------------------------------------

TEST(Estimate, WideOperatorIsSketchedThroughItsTranspose) {
  const Matrix a = with_spectrum(20, 60, geometric_spectrum(20, 0.7), 14);
  const auto ref = dense::svd_full(a);
  for (auto m : {Estimator::two_view, Estimator::one_view, Estimator::two_view_voronin}) {
    EstimateRequest req;
    req.method = m;
    req.sketch.p = 5;
    req.sketch.l = 10;
    req.sketch.l1 = 10;
    req.sketch.l2 = 14;
    const auto r = estimate(DenseOp(a), req);
    EXPECT_EQ(r.svd.u.rows(), 20);
    EXPECT_EQ(r.svd.v.rows(), 60);
    EXPECT_LE(max_rel_error(r.svd.lambda, ref.lambda.head(5)), 0.05) << to_string(m);
  }
}

TEST(Estimate, OversamplingClampedToDimensions) {
  const Matrix a = with_spectrum(40, 12, geometric_spectrum(12, 0.7), 15);
  EstimateRequest req;
  req.method = Estimator::one_view;
  req.sketch.p = 10;
  const auto r = estimate(DenseOp(a), req);
  EXPECT_EQ(r.svd.rank(), 10);
  EXPECT_EQ(r.sketch_width, 12);
}

TEST(Estimate, ReuseUsesPreviousVectorsAsLeadingSamples) {
  const Matrix a = with_spectrum(60, 40, geometric_spectrum(40, 0.7), 16);
  EstimateRequest req;
  req.method = Estimator::two_view_reuse;
  req.sketch.p = 4;
  req.sketch.l = 2;
  const auto first = estimate(DenseOp(a), req);
  req.previous = &first.svd;
  req.sketch.p = 6;
  const auto second = estimate(DenseOp(a), req);
  EXPECT_EQ(second.svd.rank(), 6);
  // Exact previous vectors make the leading triplets exact.
  const auto ref = dense::svd_full(a);
  const tsvd::TruncatedSvd exact{ref.u.leftCols(4), ref.lambda.head(4), ref.v.leftCols(4)};
  req.previous = &exact;
  req.sketch.l = 0;
  req.sketch.p = 4;
  const auto third = estimate(DenseOp(a), req);
  EXPECT_LE(max_rel_error(third.svd.lambda, ref.lambda.head(4)), 1e-12);
}

TEST(Estimate, NamesRoundTrip) {
  for (auto m : {Estimator::lanczos, Estimator::two_view, Estimator::two_view_reuse,
                 Estimator::one_view, Estimator::one_view_reuse, Estimator::subspace_iter,
                 Estimator::two_view_voronin}) {
    EXPECT_EQ(estimator_from_string(to_string(m)), m);
  }
  EXPECT_THROW(estimator_from_string("power"), std::invalid_argument);
}

TEST(TruncatedSvdType, SortedAndTruncated) {
  TruncatedSvd s{Matrix::Identity(3, 3), Vector(Eigen::Vector3d(1, 3, 2)), Matrix::Identity(3, 3)};
  EXPECT_THROW(s.validate(), NumericalError);
  const auto t = sorted(s);
  EXPECT_EQ(t.lambda(0), 3);
  EXPECT_EQ(t.u(1, 0), 1);
  EXPECT_NO_THROW(t.validate());
  EXPECT_EQ(t.truncated(2).rank(), 2);
  EXPECT_TRUE(t.transposed().u == t.v);
}

}  // namespace
}  // namespace tsvdlm::tsvd
